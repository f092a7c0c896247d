//! Operator head to robot head mapping, smoothing and jump guarding.
//!
//! Frames follow the robotics convention: x forward, z up.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadError {
    #[error("undefined yaw: forward axis is parallel to the up axis")]
    UndefinedYaw,
    #[error("invalid head control config: {0}")]
    InvalidConfig(String),
}

/// Removes pitch and roll: keeps only the rotation about `up` that points the
/// pose's forward (x) axis along its horizontal projection.
pub fn flatten_yaw(p: &Pose, up: &Vector3<f64>) -> Result<Pose, HeadError> {
    let up = up.normalize();
    let forward = p.rotate_vector(&Vector3::x());
    let horizontal = forward - up * forward.dot(&up);
    if horizontal.norm() < 1e-6 {
        return Err(HeadError::UndefinedYaw);
    }
    let f = horizontal.normalize();
    let m = Matrix3::from_columns(&[f, up.cross(&f), up]);
    let r = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    Ok(Pose::new(r, *p.translation()))
}

/// Nominal poses anchoring the VR-to-robot mapping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadMapping {
    pub t_robot_nom: Pose,
    pub t_vr_nom: Pose,
}

impl HeadMapping {
    /// Captures the nominal poses; the VR side loses its pitch and roll.
    pub fn capture(t_robot_nom: Pose, t_vr_head: &Pose) -> Result<Self, HeadError> {
        Ok(Self {
            t_robot_nom,
            t_vr_nom: flatten_yaw(t_vr_head, &Vector3::z())?,
        })
    }

    /// `T_robot_nom · T_vr_nom⁻¹ · T_vr_head`.
    pub fn map_head(&self, t_vr_head: &Pose) -> Pose {
        self.t_robot_nom * self.t_vr_nom.inverse() * *t_vr_head
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadCtlConfig {
    pub fc_hz: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub jump_threshold_m: f64,
    pub jump_threshold_deg: f64,
    pub reentry_m: f64,
    pub reentry_deg: f64,
}

impl Default for HeadCtlConfig {
    fn default() -> Self {
        Self {
            fc_hz: 100.0,
            v_max: 1.0,
            omega_max: PI,
            jump_threshold_m: 0.2,
            jump_threshold_deg: 30.0,
            reentry_m: 0.01,
            reentry_deg: 1.0,
        }
    }
}

impl HeadCtlConfig {
    pub fn validate(&self) -> Result<(), HeadError> {
        let positive = [
            ("fc_hz", self.fc_hz),
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
            ("jump_threshold_m", self.jump_threshold_m),
            ("jump_threshold_deg", self.jump_threshold_deg),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HeadError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.reentry_m >= 0.0 && self.reentry_deg >= 0.0) {
            return Err(HeadError::InvalidConfig(
                "re-entry tolerances must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Single-pole low-pass coefficient for cut-off `fc` at step `dt`.
pub fn filter_coefficient(fc: f64, dt: f64) -> f64 {
    dt / (dt + 1.0 / (TAU * fc))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    #[default]
    Tracking,
    Approach,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FilterState {
    pub current: Pose,
    pub initialized: bool,
    pub mode: Mode,
}

/// Moves `state` toward `target` by the low-pass rule; the first call snaps
/// to the target.
pub fn filter_step(state: &mut FilterState, target: &Pose, dt: f64, fc: f64) -> Pose {
    assert!(dt > 0.0, "dt must be positive");
    if !state.initialized {
        state.current = *target;
        state.initialized = true;
        return state.current;
    }
    let a = filter_coefficient(fc, dt);
    state.current = state.current.interpolate(target, a);
    state.current
}

/// Moves `from` toward `to` by at most `max_dist` meters and `max_angle`
/// radians.
pub fn step_toward(from: &Pose, to: &Pose, max_dist: f64, max_angle: f64) -> Pose {
    let dist = from.distance_to(to);
    let angle = from.angle_to(to);
    let s_t = if dist > max_dist { max_dist / dist } else { 1.0 };
    let s_r = if angle > max_angle { max_angle / angle } else { 1.0 };
    if s_t == 1.0 && s_r == 1.0 {
        return *to;
    }
    let rot = from.interpolate(to, s_r);
    let trans = from.translation() + (to.translation() - from.translation()) * s_t;
    Pose::new(*rot.rotation(), trans)
}

/// Filter with jump protection: large target jumps switch to a
/// velocity-capped approach until the state is back within the re-entry
/// tolerance. Per-tick motion never exceeds the caps in either mode.
pub fn jump_guard(state: &mut FilterState, target: &Pose, dt: f64, cfg: &HeadCtlConfig) -> (Pose, Mode) {
    assert!(dt > 0.0, "dt must be positive");
    let max_dist = cfg.v_max * dt;
    let max_angle = cfg.omega_max * dt;
    if !state.initialized {
        state.current = *target;
        state.initialized = true;
        state.mode = Mode::Tracking;
        return (state.current, state.mode);
    }
    let dist = state.current.distance_to(target);
    let angle = state.current.angle_to(target);
    if state.mode == Mode::Tracking && (dist > cfg.jump_threshold_m || angle > cfg.jump_threshold_deg.to_radians()) {
        log::debug!("head jump of {dist:.3} m / {:.1} deg, approaching", angle.to_degrees());
        state.mode = Mode::Approach;
    }
    let previous = state.current;
    match state.mode {
        Mode::Approach => {
            state.current = step_toward(&previous, target, max_dist, max_angle);
            if state.current.distance_to(target) <= cfg.reentry_m
                && state.current.angle_to(target) <= cfg.reentry_deg.to_radians()
            {
                state.mode = Mode::Tracking;
            }
        }
        Mode::Tracking => {
            let filtered = previous.interpolate(target, filter_coefficient(cfg.fc_hz, dt));
            state.current = step_toward(&previous, &filtered, max_dist, max_angle);
        }
    }
    (state.current, state.mode)
}
