//! Time-series metrics: lag estimation and correlation.

use crate::sim::SimError;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, SimError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(SimError::Analysis("series must have equal length >= 2".into()));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(SimError::Analysis("no signal: zero variance".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Normalized correlation of `a[i]` with `b[i + k]` over their overlap.
fn ncc(a: &[f64], b: &[f64], k: isize) -> Option<f64> {
    let n = a.len() as isize;
    let (start, end) = (0.max(-k), n.min(b.len() as isize - k));
    if end - start < 2 {
        return None;
    }
    let xa = &a[start as usize..end as usize];
    let xb = &b[(start + k) as usize..(end + k) as usize];
    pearson(xa, xb).ok()
}

/// Delay of `b` relative to `a` in seconds: the integer shift maximizing
/// normalized cross-correlation, refined by a parabola through the peak and
/// its neighbours. Shifts up to `max_lag_s` in either direction are tried.
pub fn estimate_lag(a: &[f64], b: &[f64], rate_hz: f64, max_lag_s: f64) -> Result<f64, SimError> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(SimError::Analysis("series must have equal length >= 3".into()));
    }
    for s in [a, b] {
        let m = mean(s);
        if s.iter().all(|v| (v - m).abs() == 0.0) {
            return Err(SimError::Analysis("no signal: flat series".into()));
        }
    }
    let max_k = ((max_lag_s * rate_hz).round() as isize).clamp(1, a.len() as isize - 2);
    let scores: Vec<(isize, f64)> = (-max_k..=max_k).filter_map(|k| ncc(a, b, k).map(|c| (k, c))).collect();
    let best = scores
        .iter()
        .enumerate()
        .max_by(|x, y| x.1 .1.total_cmp(&y.1 .1))
        .map(|(i, _)| i)
        .ok_or_else(|| SimError::Analysis("no overlapping shifts".into()))?;
    let k = scores[best].0 as f64;
    let refine = if best > 0 && best + 1 < scores.len() {
        let (l, c, r) = (scores[best - 1].1, scores[best].1, scores[best + 1].1);
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok((k + refine) / rate_hz)
}

/// Time at which `x` first rises through `threshold`, linearly interpolated
/// between samples.
pub fn first_crossing(x: &[f64], rate_hz: f64, threshold: f64) -> Option<f64> {
    let i = x.iter().position(|&v| v >= threshold)?;
    if i == 0 {
        return Some(0.0);
    }
    let frac = (threshold - x[i - 1]) / (x[i] - x[i - 1]);
    Some((i as f64 - 1.0 + frac) / rate_hz)
}

/// Time at which `x` last falls through `threshold`.
pub fn last_crossing(x: &[f64], rate_hz: f64, threshold: f64) -> Option<f64> {
    let i = x.iter().rposition(|&v| v >= threshold)?;
    if i + 1 == x.len() {
        return Some(i as f64 / rate_hz);
    }
    let frac = (x[i] - threshold) / (x[i] - x[i + 1]);
    Some((i as f64 + frac) / rate_hz)
}

/// Start and finish lags of `b` behind `a`: differences of their first
/// rising and last falling crossings of `fraction` times the peak of `a`.
pub fn onset_lags(a: &[f64], b: &[f64], rate_hz: f64, fraction: f64) -> Result<(f64, f64), SimError> {
    let peak = a.iter().cloned().fold(f64::MIN, f64::max);
    if !(peak > 0.0) {
        return Err(SimError::Analysis("no signal: reference never moves".into()));
    }
    let thr = fraction * peak;
    let missing = || SimError::Analysis("series never crosses the threshold".into());
    let t1 =
        first_crossing(b, rate_hz, thr).ok_or_else(missing)? - first_crossing(a, rate_hz, thr).ok_or_else(missing)?;
    let t2 =
        last_crossing(b, rate_hz, thr).ok_or_else(missing)? - last_crossing(a, rate_hz, thr).ok_or_else(missing)?;
    Ok((t1, t2))
}
