//! Rate-limited, delayed robot head.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::geom::Pose;
use crate::headctl::step_toward;
use crate::sim::{secs_to_ns, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    /// Translational speed cap, m/s.
    pub v_max: f64,
    /// Rotational speed cap, rad/s.
    pub omega_max: f64,
    /// Delay between issuing a command and the robot acting on it, s.
    pub command_delay_s: f64,
    /// Delay between measuring the head pose and the viewer receiving it, s.
    pub report_delay_s: f64,
    /// Pose report rate, Hz.
    pub report_hz: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: std::f64::consts::PI,
            command_delay_s: 0.100,
            report_delay_s: 0.030,
            report_hz: 100.0,
        }
    }
}

impl RobotConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(format!("robot: {m}")));
        if !(self.v_max > 0.0 && self.omega_max > 0.0) {
            return bad("speed caps must be positive");
        }
        if !(self.command_delay_s >= 0.0 && self.report_delay_s >= 0.0) {
            return bad("delays must be non-negative");
        }
        if !(self.report_hz > 0.0) {
            return bad("report rate must be positive");
        }
        Ok(())
    }
}

/// Free-floating head body following delayed commands under speed caps.
#[derive(Clone, Debug)]
pub struct RobotHeadModel {
    /// Command currently being executed.
    pub commanded: Pose,
    pub actual: Pose,
    pub cfg: RobotConfig,
    queue: VecDeque<(u64, Pose)>,
}

impl RobotHeadModel {
    pub fn new(initial: Pose, cfg: RobotConfig) -> Self {
        Self {
            commanded: initial,
            actual: initial,
            cfg,
            queue: VecDeque::new(),
        }
    }

    /// Queues `command` issued at `t_ns` and advances the body over the tick
    /// ending at `t_ns`. The target is the newest command issued at least
    /// `command_delay` earlier; the returned pose is the state at `t_ns`.
    pub fn head_step(&mut self, t_ns: u64, command: Pose, dt: f64) -> Pose {
        assert!(dt > 0.0, "dt must be positive");
        self.queue.push_back((t_ns, command));
        let delay = secs_to_ns(self.cfg.command_delay_s);
        while let Some(&(stamp, pose)) = self.queue.front() {
            if stamp + delay > t_ns {
                break;
            }
            self.commanded = pose;
            self.queue.pop_front();
        }
        self.actual = step_toward(
            &self.actual,
            &self.commanded,
            self.cfg.v_max * dt,
            self.cfg.omega_max * dt,
        );
        self.actual
    }
}
