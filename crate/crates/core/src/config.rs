//! Run configuration shared by the command-line tools.
//!
//! One JSON document with optional sections; omitted keys take their
//! defaults and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Pose;
use crate::headctl::HeadCtlConfig;
use crate::render::RenderConfig;
use crate::sim::{LatencyBudget, LoopConfig, RobotConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Scheduler rates and closed-loop geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub control_hz: f64,
    pub camera_hz: f64,
    pub display_hz: f64,
    pub settle_s: f64,
    pub capture_scale: f64,
    pub robot_nominal: Pose,
}

impl Default for SimSection {
    fn default() -> Self {
        let l = LoopConfig::default();
        Self {
            control_hz: l.control_hz,
            camera_hz: l.camera_hz,
            display_hz: l.display_hz,
            settle_s: l.settle_s,
            capture_scale: l.capture_scale,
            robot_nominal: l.robot_nominal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSection {
    pub port: u16,
    /// Eye-view streaming rate, Hz.
    pub stream_hz: f64,
    /// Streamed eye views are `frame_size` square.
    pub frame_size: u32,
    pub jpeg_quality: u8,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            port: 8765,
            stream_hz: 30.0,
            frame_size: 512,
            jpeg_quality: 80,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema: u32,
    pub headctl: HeadCtlConfig,
    pub robot: RobotConfig,
    pub sim: SimSection,
    pub latency: LatencyBudget,
    pub render: RenderConfig,
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: 1,
            headctl: HeadCtlConfig::default(),
            robot: RobotConfig::default(),
            sim: SimSection::default(),
            latency: LatencyBudget::default(),
            render: LoopConfig::default().render,
            serve: ServeSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != 1 {
            return Err(ConfigError::Invalid(format!("unsupported schema {}", self.schema)));
        }
        self.loop_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let s = &self.serve;
        if !(s.stream_hz > 0.0) || s.frame_size == 0 || !(1..=100).contains(&s.jpeg_quality) {
            return Err(ConfigError::Invalid(
                "serve: stream_hz, frame_size and jpeg_quality (1-100) must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            control_hz: self.sim.control_hz,
            camera_hz: self.sim.camera_hz,
            display_hz: self.sim.display_hz,
            settle_s: self.sim.settle_s,
            robot_nominal: self.sim.robot_nominal,
            capture_scale: self.sim.capture_scale,
            latency: self.latency,
            robot: self.robot,
            headctl: self.headctl,
            render: self.render,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = RunConfig::from_json(r#"{"headctl":{"fc_hz":50.0},"latency":{"render_ms":4.0}}"#).unwrap();
        assert_eq!(cfg.headctl.fc_hz, 50.0);
        assert_eq!(cfg.headctl.v_max, 1.0);
        assert_eq!(cfg.latency.total_ms(), 36.0);
        assert_eq!(cfg.sim.control_hz, 250.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"headctl":{"fc":50.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sim":{"control_hz":0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"render":{"r":-1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"serve":{"jpeg_quality":0}}"#).is_err());
    }
}
