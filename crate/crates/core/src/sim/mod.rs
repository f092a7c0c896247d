//! Closed-loop simulation of the teleoperation pipeline.

pub mod analysis;
mod closed_loop;
mod live;
pub mod probe;
pub mod robot;
pub mod scene;
pub mod trajectory;

pub use analysis::{estimate_lag, first_crossing, last_crossing, onset_lags, pearson};
pub use closed_loop::{
    run_closed_loop, ClosedLoop, FrameDump, FrameTiming, LatencyBudget, LoopConfig, SimRow, SimTrace, StepOutput,
};
pub use live::{run_live_session, LiveOptions, LiveSummary};
pub use probe::BearingProbe;
pub use robot::{RobotConfig, RobotHeadModel};
pub use scene::{capture, Capturer, Primitive, Scene, Texture};
pub use trajectory::{Keyframe, Trajectory};

use thiserror::Error;

use crate::render::RenderError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Analysis(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("parsing JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(String),
}

/// Seconds to whole nanoseconds.
pub fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}
