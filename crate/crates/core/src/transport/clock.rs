//! Two-way clock offset estimation and pose-to-photon latency reports.

use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::transport::TransportError;

/// Exchanges used per offset estimate.
pub const DEFAULT_EXCHANGES: usize = 8;

/// Wall-clock time in nanoseconds since the Unix epoch.
pub fn now_ns() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

/// One completed exchange: `t1`/`t4` on the local clock, `t2`/`t3` on the
/// remote clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClockSample {
    pub t1: u64,
    pub t2: u64,
    pub t3: u64,
    pub t4: u64,
}

impl ClockSample {
    /// Remote minus local clock, ns.
    pub fn offset(&self) -> i64 {
        let a = self.t2 as i128 - self.t1 as i128;
        let b = self.t3 as i128 - self.t4 as i128;
        ((a + b) / 2) as i64
    }

    /// Round-trip time excluding remote processing, ns.
    pub fn rtt(&self) -> i64 {
        ((self.t4 as i128 - self.t1 as i128) - (self.t3 as i128 - self.t2 as i128)) as i64
    }
}

/// Anything that can run one ping/pong exchange.
pub trait ClockPeer {
    fn exchange(&mut self) -> Result<ClockSample, TransportError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OffsetEstimate {
    /// Remote minus local clock, ns (median over exchanges).
    pub offset_ns: i64,
    /// Median round-trip time, ns.
    pub rtt_ns: i64,
}

fn median(mut v: Vec<i64>) -> i64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        ((v[n / 2 - 1] as i128 + v[n / 2] as i128) / 2) as i64
    }
}

/// Median NTP-style offset over `k` exchanges.
pub fn clock_offset(peer: &mut dyn ClockPeer, k: usize) -> Result<OffsetEstimate, TransportError> {
    assert!(k > 0, "need at least one exchange");
    let samples = (0..k).map(|_| peer.exchange()).collect::<Result<Vec<_>, _>>()?;
    Ok(offset_from_samples(&samples))
}

pub fn offset_from_samples(samples: &[ClockSample]) -> OffsetEstimate {
    OffsetEstimate {
        offset_ns: median(samples.iter().map(ClockSample::offset).collect()),
        rtt_ns: median(samples.iter().map(ClockSample::rtt).collect()),
    }
}

/// In-process link with a skewed remote clock and random one-way delays.
#[derive(Clone, Debug)]
pub struct SimulatedLink {
    /// Remote minus local clock, ns.
    pub skew_ns: i64,
    outbound: Uniform<u64>,
    inbound: Uniform<u64>,
    processing_ns: u64,
    local_now: u64,
    rng: ChaCha8Rng,
}

impl SimulatedLink {
    /// Delays drawn uniformly from `[min, max]` ns on each leg.
    pub fn new(skew_ns: i64, outbound: (u64, u64), inbound: (u64, u64), seed: u64) -> Self {
        Self {
            skew_ns,
            outbound: Uniform::new_inclusive(outbound.0, outbound.1),
            inbound: Uniform::new_inclusive(inbound.0, inbound.1),
            processing_ns: 50_000,
            local_now: 1_000_000_000_000,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl ClockPeer for SimulatedLink {
    fn exchange(&mut self) -> Result<ClockSample, TransportError> {
        let t1 = self.local_now;
        let out = self.outbound.sample(&mut self.rng);
        let back = self.inbound.sample(&mut self.rng);
        let t2 = (t1 + out) as i64 + self.skew_ns;
        let t3 = t2 + self.processing_ns as i64;
        let t4 = t1 + out + self.processing_ns + back;
        self.local_now = t4 + 1_000_000;
        Ok(ClockSample {
            t1,
            t2: t2 as u64,
            t3: t3 as u64,
            t4,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyReport {
    /// Corrected latency per frame, seconds; `None` for anomalies.
    pub per_frame: Vec<Option<f64>>,
    pub anomalies: usize,
    pub mean_s: f64,
    pub p95_s: f64,
}

/// Pose-to-photon latency of each `(capture_ns, display_ns)` pair.
/// `offset_ns` is the display clock minus the capture clock. Negative
/// latencies are clock anomalies and are left out of the summary.
pub fn latency_report(frames: &[(u64, u64)], offset_ns: i64) -> LatencyReport {
    let per_frame: Vec<Option<f64>> = frames
        .iter()
        .map(|&(capture, display)| {
            let l = display as i128 - capture as i128 - offset_ns as i128;
            (l >= 0).then_some(l as f64 * 1e-9)
        })
        .collect();
    let mut good: Vec<f64> = per_frame.iter().flatten().copied().collect();
    let anomalies = per_frame.len() - good.len();
    if anomalies > 0 {
        log::warn!("{anomalies} frames with negative latency after clock correction");
    }
    good.sort_by(f64::total_cmp);
    let (mean_s, p95_s) = if good.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let mean = good.iter().sum::<f64>() / good.len() as f64;
        // Nearest-rank percentile.
        let rank = ((0.95 * good.len() as f64).ceil() as usize).clamp(1, good.len());
        (mean, good[rank - 1])
    };
    LatencyReport {
        per_frame,
        anomalies,
        mean_s,
        p95_s,
    }
}
