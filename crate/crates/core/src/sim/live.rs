//! Real-time closed loop driven by a remote operator over a [`Carrier`].
//!
//! Inbound: VR head poses (latest value wins), clock pings and config
//! updates (`{"r": meters}`, `{"rezero": true}`). Outbound: JPEG eye views
//! stamped with the capture time of the camera frame they were rendered
//! from, and the reported robot head pose.

use std::time::{Duration, Instant};

use image::codecs::jpeg::JpegEncoder;
use image::RgbImage;

use crate::camera::StereoRig;
use crate::exec::Execution;
use crate::geom::Pose;
use crate::sim::trajectory::operator_rest;
use crate::sim::{ClosedLoop, LoopConfig, Scene, SimError};
use crate::transport::{clock_pong, frames, now_ns, Carrier, Encoding, FrameMsg, Message, PoseMsg, TransportError};

/// Behind by more than this many ticks, the loop skips ahead instead of
/// trying to catch up.
const MAX_CATCH_UP_TICKS: u64 = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiveOptions {
    pub stream_hz: f64,
    /// Eye views are rendered `frame_size` square.
    pub frame_size: u32,
    pub jpeg_quality: u8,
    /// Added to every clock the session reports, for skew experiments.
    pub clock_skew_ns: i64,
    /// End the session after this long.
    pub max_duration: Option<Duration>,
}

impl Default for LiveOptions {
    fn default() -> Self {
        Self {
            stream_hz: 30.0,
            frame_size: 512,
            jpeg_quality: 80,
            clock_skew_ns: 0,
            max_duration: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LiveSummary {
    pub ticks: u64,
    pub skipped_ticks: u64,
    pub poses_received: u64,
    pub frames_sent: u64,
}

fn encode_jpeg(img: &RgbImage, quality: u8) -> Result<Vec<u8>, SimError> {
    let mut out = Vec::new();
    JpegEncoder::new_with_quality(&mut out, quality)
        .encode_image(img)
        .map_err(|e| SimError::Io(format!("jpeg: {e}")))?;
    Ok(out)
}

fn transport(e: TransportError) -> SimError {
    SimError::Io(e.to_string())
}

struct Session<'a> {
    carrier: &'a mut dyn Carrier,
    sim: ClosedLoop,
    opts: LiveOptions,
    operator: Pose,
    summary: LiveSummary,
    /// Wall clock at simulated time zero.
    epoch: u64,
    /// Simulated time runs behind wall time by this much after skipped
    /// ticks.
    lag: Duration,
}

impl Session<'_> {
    /// Session clock reading at simulated time `sim_ns`.
    fn wall(&self, sim_ns: u64) -> u64 {
        (self.epoch + sim_ns + self.lag.as_nanos() as u64).saturating_add_signed(self.opts.clock_skew_ns)
    }

    fn handle(&mut self, msg: Message, received_ns: u64) -> Result<(), TransportError> {
        match msg {
            Message::Pose(p) if p.frame_id == frames::VR_HEAD => match p.to_pose() {
                Ok(pose) => {
                    self.operator = pose;
                    self.summary.poses_received += 1;
                }
                Err(e) => log::warn!("ignoring head pose: {e}"),
            },
            Message::ClockPing(p) => {
                let pong = clock_pong(&p, received_ns, self.opts.clock_skew_ns);
                self.carrier.send(&pong)?;
            }
            Message::ConfigUpdate(v) => self.apply_update(&v),
            other => log::warn!("ignoring unexpected {:?} message", other.kind()),
        }
        Ok(())
    }

    fn apply_update(&mut self, v: &serde_json::Value) {
        let Some(obj) = v.as_object() else {
            log::warn!("config update must be a JSON object");
            return;
        };
        for (key, value) in obj {
            match (key.as_str(), value) {
                ("r", serde_json::Value::Number(n)) => {
                    let r = n.as_f64().unwrap_or(f64::NAN);
                    if let Err(e) = self.sim.set_radius(r) {
                        log::warn!("config update: {e}");
                    }
                }
                ("rezero", serde_json::Value::Bool(true)) => self.sim.rezero(),
                ("rezero", serde_json::Value::Bool(false)) => {}
                _ => log::warn!("config update: ignoring {key}={value}"),
            }
        }
    }

    /// Sends the current eye views if a new camera frame is on display.
    /// `Ok(false)` once the peer has gone.
    fn stream(&mut self, last_sent: &mut Option<u64>) -> Result<bool, SimError> {
        let Some(capture_ns) = self.sim.shown_capture_ns() else {
            return Ok(true);
        };
        if *last_sent == Some(capture_ns) {
            return Ok(true);
        }
        let Some(view) = self.sim.render_eyes() else {
            return Ok(true);
        };
        let view = view?;
        let stamp = self.wall(capture_ns);
        for (camera_id, img) in [(0u8, &view.left.image), (1, &view.right.image)] {
            let msg = Message::Frame(FrameMsg {
                capture_timestamp_ns: stamp,
                camera_id,
                encoding: Encoding::Jpeg,
                width: img.width() as u16,
                height: img.height() as u16,
                payload: encode_jpeg(img, self.opts.jpeg_quality)?,
            });
            match self.carrier.send(&msg) {
                Ok(()) => {}
                Err(TransportError::Closed) => return Ok(false),
                Err(e) => return Err(transport(e)),
            }
        }
        *last_sent = Some(capture_ns);
        self.summary.frames_sent += 1;
        Ok(true)
    }
}

/// Runs one operator session until the peer disconnects or
/// `opts.max_duration` elapses.
pub fn run_live_session(
    carrier: &mut dyn Carrier,
    scene: Scene,
    rig: &StereoRig,
    cfg: &LoopConfig,
    opts: LiveOptions,
    exec: Execution,
) -> Result<LiveSummary, SimError> {
    if !(opts.stream_hz > 0.0) || opts.frame_size == 0 || opts.frame_size > u16::MAX as u32 {
        return Err(SimError::InvalidConfig(
            "stream_hz and frame_size must be positive".into(),
        ));
    }
    let mut cfg = cfg.clone();
    cfg.render.out_width = opts.frame_size;
    cfg.render.out_height = opts.frame_size;
    let period = Duration::from_nanos(cfg.control_period_ns());
    let stream_every = Duration::from_secs_f64(1.0 / opts.stream_hz);
    let mut s = Session {
        sim: ClosedLoop::new(scene, rig, cfg, true, exec)?,
        carrier,
        opts,
        operator: operator_rest(),
        summary: LiveSummary::default(),
        epoch: now_ns(),
        lag: Duration::ZERO,
    };
    let start = Instant::now();
    let mut next_stream = Duration::ZERO;
    let mut last_sent = None;
    loop {
        let elapsed = start.elapsed();
        if opts.max_duration.is_some_and(|d| elapsed >= d) {
            break;
        }
        let due = Duration::from_nanos(s.sim.time_ns()) + s.lag;
        let wait = if due > elapsed { due - elapsed } else { Duration::ZERO };
        match s.carrier.recv(wait) {
            Ok(Some(msg)) => {
                let t = now_ns();
                match s.handle(msg, t) {
                    Ok(()) => continue,
                    Err(TransportError::Closed) => break,
                    Err(e) => return Err(transport(e)),
                }
            }
            Ok(None) => {}
            Err(TransportError::Closed) => break,
            Err(e) => return Err(transport(e)),
        }
        let elapsed = start.elapsed();
        let behind = elapsed.saturating_sub(Duration::from_nanos(s.sim.time_ns()) + s.lag);
        let ticks = (behind.as_nanos() / period.as_nanos()) as u64;
        if ticks > MAX_CATCH_UP_TICKS {
            let skip = ticks - 1;
            s.lag += period * skip as u32;
            s.summary.skipped_ticks += skip;
            log::debug!("live loop behind by {ticks} ticks; skipping {skip}");
        }
        while Duration::from_nanos(s.sim.time_ns()) + s.lag <= start.elapsed() {
            let out = s.sim.step(&s.operator)?;
            s.summary.ticks += 1;
            if out.display_due {
                let t = s.wall(s.sim.time_ns());
                let msg = Message::Pose(PoseMsg::from_pose(t, frames::ROBOT_HEAD, &out.row.robot));
                match s.carrier.send(&msg) {
                    Ok(()) => {}
                    Err(TransportError::Closed) => return Ok(s.summary),
                    Err(e) => return Err(transport(e)),
                }
            }
        }
        if start.elapsed() >= next_stream {
            next_stream += stream_every;
            if !s.stream(&mut last_sent)? {
                break;
            }
        }
    }
    Ok(s.summary)
}
