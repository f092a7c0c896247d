//! Hand-eye calibration of the camera / head / arm transform chain.
//!
//! The marker origin seen by the left camera is
//! `T_cam⁻¹ · T_head⁻¹ · T_mount · T_arm · T_mark`, and the right camera sees
//! the same point moved into its own frame through the rig extrinsics. The
//! unknowns are `T_cam` (camera in head flange), `T_mount` (arm base in head
//! base) and the translation of `T_mark` (marker in arm flange). The marker is
//! a single point, so the orientation of `T_mark` is unobservable and stays at
//! its initial value.

use std::path::Path;

use nalgebra::{SMatrix, SVector, SymmetricEigen, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{optical_in_body, CameraError, DoubleSphereIntrinsics, Projected, StereoRig};
use crate::exec::Execution;
use crate::geom::{Pose, Twist};

/// Number of estimated scalars: two 6-DoF twists and one translation.
pub const N_PARAMS: usize = 15;

/// Names of the local coordinates, in parameter-vector order.
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "t_cam.rx",
    "t_cam.ry",
    "t_cam.rz",
    "t_cam.tx",
    "t_cam.ty",
    "t_cam.tz",
    "t_mount.rx",
    "t_mount.ry",
    "t_mount.rz",
    "t_mount.tx",
    "t_mount.ty",
    "t_mount.tz",
    "t_mark.tx",
    "t_mark.ty",
    "t_mark.tz",
];

/// Normal equations with a condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e8;

/// Central-difference step for the Jacobian.
const FD_STEP: f64 = 1e-6;

type Vec15 = SVector<f64, N_PARAMS>;
type Mat15 = SMatrix<f64, N_PARAMS, N_PARAMS>;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("empty sample set")]
    EmptySamples,
    #[error("need at least {required} usable samples, found {found}")]
    InsufficientSamples { found: usize, required: usize },
    #[error("unidentifiable configuration: near-null direction {direction} (condition number {condition:.3e})")]
    Unidentifiable { direction: String, condition: f64 },
    #[error("synthetic generation yielded {found} of {requested} samples after {attempts} attempts")]
    SyntheticYield {
        found: usize,
        requested: usize,
        attempts: usize,
    },
    #[error("invalid sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing JSON: {0}")]
    Parse(#[from] serde_json::Error),
}

/// One observation of the wrist marker.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibSample {
    pub t_head: Pose,
    pub t_arm: Pose,
    #[serde(with = "vec2")]
    pub px_left: Vector2<f64>,
    #[serde(with = "vec2")]
    pub px_right: Vector2<f64>,
    #[serde(default = "yes")]
    pub valid_left: bool,
    #[serde(default = "yes")]
    pub valid_right: bool,
}

fn yes() -> bool {
    true
}

mod vec2 {
    use nalgebra::Vector2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector2<f64>, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector2<f64>, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(Vector2::new(x, y))
    }
}

impl CalibSample {
    fn check(&self, index: usize, rig: &StereoRig) -> Result<(), CalibError> {
        let bad = |reason: &str| CalibError::InvalidSample {
            index,
            reason: reason.to_string(),
        };
        if !self.valid_left && !self.valid_right {
            return Err(bad("neither side is valid"));
        }
        if !self.t_head.is_finite() || !self.t_arm.is_finite() {
            return Err(bad("non-finite pose"));
        }
        if self.valid_left && !rig.left.contains(&self.px_left) {
            return Err(bad("left pixel outside the image"));
        }
        if self.valid_right && !rig.right.contains(&self.px_right) {
            return Err(bad("right pixel outside the image"));
        }
        Ok(())
    }

    fn both_valid(&self) -> bool {
        self.valid_left && self.valid_right
    }
}

/// The three transforms being estimated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibParams {
    pub t_cam: Pose,
    pub t_mount: Pose,
    pub t_mark: Pose,
}

impl CalibParams {
    /// Ground truth of the built-in synthetic setup: a camera slightly offset
    /// from the head flange, the arm base to the front right of the head base
    /// and a marker a few centimeters off the wrist flange.
    pub fn reference() -> Self {
        Self {
            t_cam: Pose::new(
                nalgebra::UnitQuaternion::from_scaled_axis(Vector3::new(0.02, -0.03, 0.05)),
                Vector3::new(0.02, -0.03, 0.08),
            ),
            t_mount: Pose::new(
                nalgebra::UnitQuaternion::from_scaled_axis(Vector3::new(0.05, -0.04, 0.6)),
                Vector3::new(0.35, -0.45, -0.25),
            ),
            t_mark: Pose::new(
                nalgebra::UnitQuaternion::from_scaled_axis(Vector3::new(0.1, 0.2, -0.3)),
                Vector3::new(0.03, -0.02, 0.06),
            ),
        }
    }

    /// `T_cam · exp(δ₀..₆)`, `T_mount · exp(δ₆..₁₂)`, marker translation `+ δ₁₂..₁₅`.
    pub fn retract(&self, delta: &[f64]) -> Self {
        assert_eq!(delta.len(), N_PARAMS);
        let t_mark = Pose::new(
            *self.t_mark.rotation(),
            self.t_mark.translation() + Vector3::new(delta[12], delta[13], delta[14]),
        );
        Self {
            t_cam: self.t_cam.retract(&Twist::from_slice(&delta[0..6])),
            t_mount: self.t_mount.retract(&Twist::from_slice(&delta[6..12])),
            t_mark,
        }
    }

    /// Applies a rigid perturbation of exactly `translation` meters and
    /// `angle` radians (random directions) to each of the three poses.
    pub fn perturbed<R: Rng>(&self, translation: f64, angle: f64, rng: &mut R) -> Self {
        let mut kick = |p: &Pose| {
            let axis: [f64; 3] = UnitSphere.sample(rng);
            let dir: [f64; 3] = UnitSphere.sample(rng);
            let delta = Pose::new(
                nalgebra::UnitQuaternion::from_scaled_axis(Vector3::from(axis) * angle),
                Vector3::from(dir) * translation,
            );
            p.compose(&delta)
        };
        Self {
            t_cam: kick(&self.t_cam),
            t_mount: kick(&self.t_mount),
            t_mark: kick(&self.t_mark),
        }
    }
}

/// Solver output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibEstimate {
    #[serde(default = "schema_version")]
    pub schema: u32,
    pub t_cam: Pose,
    pub t_mount: Pose,
    pub t_mark: Pose,
    pub rms_px: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn schema_version() -> u32 {
    1
}

impl CalibEstimate {
    pub fn params(&self) -> CalibParams {
        CalibParams {
            t_cam: self.t_cam,
            t_mount: self.t_mount,
            t_mark: self.t_mark,
        }
    }
}

/// Predicted marker projections for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelPrediction {
    pub left: Projected,
    pub right: Projected,
}

/// Marker origin in the left and right camera frames.
pub fn marker_in_cameras(params: &CalibParams, sample: &CalibSample, rig: &StereoRig) -> (Vector3<f64>, Vector3<f64>) {
    let chain = params.t_cam.inverse() * sample.t_head.inverse() * params.t_mount * sample.t_arm * params.t_mark;
    let p_left = *chain.translation();
    // t_l_r places the right camera in the left frame, so points move the
    // other way.
    let p_right = rig.t_l_r.inverse().transform_point(&p_left);
    (p_left, p_right)
}

/// Projects the marker through both cameras.
pub fn predict_pixels(
    params: &CalibParams,
    sample: &CalibSample,
    rig: &StereoRig,
) -> Result<PixelPrediction, CalibError> {
    let (p_left, p_right) = marker_in_cameras(params, sample, rig);
    Ok(PixelPrediction {
        left: rig.left.project(&p_left)?,
        right: rig.right.project(&p_right)?,
    })
}

/// Residual block of one sample: `[uL, vL, uR, vR]` predicted minus
/// detected, zeroed for sides that are not observed.
fn residuals(params: &CalibParams, sample: &CalibSample, rig: &StereoRig) -> Result<[f64; 4], CalibError> {
    let pred = predict_pixels(params, sample, rig)?;
    let mut r = [0.0; 4];
    if sample.valid_left {
        let d = pred.left.pixel - sample.px_left;
        r[0] = d.x;
        r[1] = d.y;
    }
    if sample.valid_right {
        let d = pred.right.pixel - sample.px_right;
        r[2] = d.x;
        r[3] = d.y;
    }
    Ok(r)
}

fn residual_count(samples: &[CalibSample]) -> usize {
    samples
        .iter()
        .map(|s| 2 * (s.valid_left as usize + s.valid_right as usize))
        .sum()
}

fn cost_with(
    params: &CalibParams,
    samples: &[CalibSample],
    rig: &StereoRig,
    exec: Execution,
) -> Result<f64, CalibError> {
    let blocks = exec.map_slice(samples, |s| residuals(params, s, rig));
    let mut total = 0.0;
    for block in blocks {
        total += block?.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total)
}

/// Sum of squared pixel residuals over all observed sides.
pub fn cost(params: &CalibParams, samples: &[CalibSample], rig: &StereoRig) -> Result<f64, CalibError> {
    if samples.is_empty() {
        return Err(CalibError::EmptySamples);
    }
    cost_with(params, samples, rig, Execution::Sequential)
}

/// Normal equations `JᵀJ`, gradient `Jᵀr` and cost at `params`.
fn normal_equations(
    params: &CalibParams,
    samples: &[CalibSample],
    rig: &StereoRig,
    exec: Execution,
) -> Result<(Mat15, Vec15, f64), CalibError> {
    let blocks = exec.map_slice(samples, |s| -> Result<_, CalibError> {
        let r0 = residuals(params, s, rig)?;
        let mut jac = SMatrix::<f64, 4, N_PARAMS>::zeros();
        let mut delta = [0.0; N_PARAMS];
        for k in 0..N_PARAMS {
            delta[k] = FD_STEP;
            let plus = residuals(&params.retract(&delta), s, rig)?;
            delta[k] = -FD_STEP;
            let minus = residuals(&params.retract(&delta), s, rig)?;
            delta[k] = 0.0;
            for i in 0..4 {
                jac[(i, k)] = (plus[i] - minus[i]) / (2.0 * FD_STEP);
            }
        }
        let r = SVector::<f64, 4>::from(r0);
        Ok((jac.transpose() * jac, jac.transpose() * r, r.norm_squared()))
    });
    let mut jtj = Mat15::zeros();
    let mut jtr = Vec15::zeros();
    let mut e = 0.0;
    for block in blocks {
        let (a, b, c) = block?;
        jtj += a;
        jtr += b;
        e += c;
    }
    Ok((jtj, jtr, e))
}

/// Condition number of the normal equations and a description of their
/// weakest direction.
pub fn conditioning(
    params: &CalibParams,
    samples: &[CalibSample],
    rig: &StereoRig,
) -> Result<(f64, String), CalibError> {
    let (jtj, _, _) = normal_equations(params, samples, rig, Execution::default())?;
    Ok(condition_of(&jtj))
}

fn condition_of(jtj: &Mat15) -> (f64, String) {
    let eig = SymmetricEigen::new(*jtj);
    let (mut min_i, mut max_v, mut min_v) = (0, f64::MIN, f64::MAX);
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        max_v = max_v.max(v);
        if v < min_v {
            min_v = v;
            min_i = i;
        }
    }
    let condition = if min_v <= 0.0 { f64::INFINITY } else { max_v / min_v };
    (
        condition,
        describe_direction(&eig.eigenvectors.column(min_i).into_owned()),
    )
}

/// Lists the dominant components of a unit parameter direction, e.g.
/// `+0.71 t_cam.tx -0.71 t_mount.tx`.
fn describe_direction(v: &Vec15) -> String {
    let mut idx: Vec<usize> = (0..N_PARAMS).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()));
    let sign = if v[idx[0]] < 0.0 { -1.0 } else { 1.0 };
    idx.iter()
        .take_while(|&&i| v[i].abs() >= 0.2)
        .map(|&i| format!("{:+.2} {}", sign * v[i], PARAM_NAMES[i]))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    /// Keep samples where only one camera sees the marker.
    pub allow_single_side: bool,
    /// Minimum number of usable samples.
    pub min_samples: usize,
    pub exec: Execution,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_lambda: 1e-3,
            allow_single_side: false,
            min_samples: 15,
            exec: Execution::default(),
        }
    }
}

/// Levenberg–Marquardt over the 15 local coordinates.
pub fn solve(
    samples: &[CalibSample],
    rig: &StereoRig,
    init: &CalibParams,
    opts: &SolveOptions,
) -> Result<CalibEstimate, CalibError> {
    if samples.is_empty() {
        return Err(CalibError::EmptySamples);
    }
    rig.validate()?;
    for (i, s) in samples.iter().enumerate() {
        s.check(i, rig)?;
    }
    let used: Vec<CalibSample> = samples
        .iter()
        .filter(|s| opts.allow_single_side || s.both_valid())
        .copied()
        .collect();
    if used.len() < opts.min_samples {
        return Err(CalibError::InsufficientSamples {
            found: used.len(),
            required: opts.min_samples,
        });
    }
    let n_res = residual_count(&used) as f64;

    let mut params = *init;
    let (mut jtj, mut jtr, mut e) = normal_equations(&params, &used, rig, opts.exec)?;
    let (condition, direction) = condition_of(&jtj);
    if !(condition < MAX_CONDITION) {
        return Err(CalibError::Unidentifiable { direction, condition });
    }

    let mut lambda = opts.initial_lambda;
    let mut converged = e == 0.0;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let mut accepted = false;
        while !accepted {
            let mut damped = jtj;
            for i in 0..N_PARAMS {
                damped[(i, i)] += lambda * jtj[(i, i)];
            }
            let step = match damped.cholesky() {
                Some(c) => -c.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            if step.norm() < 1e-10 {
                converged = true;
                break;
            }
            let candidate = params.retract(step.as_slice());
            let e_new = cost_with(&candidate, &used, rig, opts.exec)?;
            if e_new.is_finite() && e_new < e {
                let decrease = (e - e_new) / e;
                params = candidate;
                lambda /= 10.0;
                accepted = true;
                if decrease < 1e-10 || e_new == 0.0 {
                    converged = true;
                    e = e_new;
                } else {
                    (jtj, jtr, e) = normal_equations(&params, &used, rig, opts.exec)?;
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e32 {
                    // The step has shrunk to nothing without reducing cost.
                    converged = true;
                    break;
                }
            }
        }
    }

    log::debug!("calibration finished after {iterations} iterations, cost {e:.6e}, converged {converged}");
    Ok(CalibEstimate {
        schema: 1,
        t_cam: params.t_cam,
        t_mount: params.t_mount,
        t_mark: params.t_mark,
        rms_px: (e / n_res).sqrt(),
        iterations,
        converged,
    })
}

/// Head flange pose at sweep time `t` seconds: incommensurate sinusoids in
/// yaw, pitch, roll and position.
pub fn head_sweep(t: f64) -> Pose {
    use std::f64::consts::TAU;
    let yaw = 0.5 * (TAU * 0.23 * t).sin();
    let pitch = 0.3 * (TAU * 0.31 * t + 1.0).sin();
    let roll = 0.2 * (TAU * 0.17 * t + 2.0).sin();
    let r = nalgebra::UnitQuaternion::from_euler_angles(roll, pitch, yaw) * optical_in_body();
    let p = Vector3::new(
        0.05 * (TAU * 0.13 * t).sin(),
        0.05 * (TAU * 0.19 * t + 0.5).sin(),
        0.45 + 0.05 * (TAU * 0.29 * t + 1.5).sin(),
    );
    Pose::new(r, p)
}

/// Synthetic data options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticOptions {
    pub n: usize,
    pub noise_px: f64,
    pub seed: u64,
    /// Sweep time between consecutive attempts.
    pub dt: f64,
    /// Attempts allowed per requested sample.
    pub attempts_per_sample: usize,
}

impl SyntheticOptions {
    pub fn new(n: usize, noise_px: f64, seed: u64) -> Self {
        Self {
            n,
            noise_px,
            seed,
            dt: 0.05,
            attempts_per_sample: 50,
        }
    }
}

/// Marker positions are drawn uniformly from this box in the head base frame.
const MARKER_BOX: ([f64; 3], [f64; 3]) = ([0.45, -0.5, 0.05], [1.1, 0.5, 0.8]);

/// Generates samples observed by both cameras under `truth`.
pub fn generate_synthetic(
    truth: &CalibParams,
    rig: &StereoRig,
    opts: &SyntheticOptions,
) -> Result<Vec<CalibSample>, CalibError> {
    rig.validate()?;
    if opts.n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, opts.noise_px.max(0.0)).expect("finite std");
    let attempts = opts.n.saturating_mul(opts.attempts_per_sample);
    let mut out = Vec::with_capacity(opts.n);
    for a in 0..attempts {
        if out.len() == opts.n {
            break;
        }
        let t_head = head_sweep(a as f64 * opts.dt);
        let marker = Vector3::new(
            rng.gen_range(MARKER_BOX.0[0]..MARKER_BOX.1[0]),
            rng.gen_range(MARKER_BOX.0[1]..MARKER_BOX.1[1]),
            rng.gen_range(MARKER_BOX.0[2]..MARKER_BOX.1[2]),
        );
        let axis: [f64; 3] = UnitSphere.sample(&mut rng);
        let angle = rng.gen_range(0.0..1.0);
        // Wrist pointing roughly back at the head, randomly twisted.
        let rest = nalgebra::UnitQuaternion::from_scaled_axis(Vector3::new(0.0, -std::f64::consts::FRAC_PI_2, 0.0));
        let r_flange = nalgebra::UnitQuaternion::from_scaled_axis(Vector3::from(axis) * angle) * rest;
        let p_flange = marker - r_flange * truth.t_mark.translation();
        let t_arm = truth.t_mount.inverse() * Pose::new(r_flange, p_flange);

        let mut sample = CalibSample {
            t_head,
            t_arm,
            px_left: Vector2::zeros(),
            px_right: Vector2::zeros(),
            valid_left: true,
            valid_right: true,
        };
        let pred = match predict_pixels(truth, &sample, rig) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let noisy = |p: &Projected, intr: &DoubleSphereIntrinsics, rng: &mut ChaCha8Rng| {
            if !p.valid {
                return None;
            }
            let px = p.pixel + Vector2::new(noise.sample(rng), noise.sample(rng));
            intr.contains(&px).then_some(px)
        };
        let (Some(l), Some(r)) = (
            noisy(&pred.left, &rig.left, &mut rng),
            noisy(&pred.right, &rig.right, &mut rng),
        ) else {
            continue;
        };
        sample.px_left = l;
        sample.px_right = r;
        out.push(sample);
    }
    if out.len() < opts.n {
        return Err(CalibError::SyntheticYield {
            found: out.len(),
            requested: opts.n,
            attempts,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct SamplesFile<'a> {
    schema: u32,
    samples: &'a [CalibSample],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SamplesInput {
    Wrapped {
        #[allow(dead_code)]
        schema: u32,
        samples: Vec<CalibSample>,
    },
    Bare(Vec<CalibSample>),
}

pub fn samples_to_json(samples: &[CalibSample]) -> String {
    serde_json::to_string_pretty(&SamplesFile { schema: 1, samples }).expect("samples serialize")
}

/// Accepts `{"schema":1,"samples":[...]}` or a bare list.
pub fn samples_from_json(text: &str) -> Result<Vec<CalibSample>, CalibError> {
    Ok(match serde_json::from_str(text)? {
        SamplesInput::Wrapped { samples, .. } | SamplesInput::Bare(samples) => samples,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    #[serde(default)]
    #[allow(dead_code)]
    schema: Option<u32>,
    t_cam: Pose,
    t_mount: Pose,
    t_mark: Pose,
}

pub fn params_from_json(text: &str) -> Result<CalibParams, CalibError> {
    let f: ParamsFile = serde_json::from_str(text)?;
    Ok(CalibParams {
        t_cam: f.t_cam,
        t_mount: f.t_mount,
        t_mark: f.t_mark,
    })
}

pub fn params_to_json(params: &CalibParams) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "schema": 1,
        "t_cam": params.t_cam,
        "t_mount": params.t_mount,
        "t_mark": params.t_mark,
    }))
    .expect("params serialize")
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String, CalibError> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|source| CalibError::Io {
        path: path.display().to_string(),
        source,
    })
}
