//! Double-sphere fisheye model and the stereo rig description.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Pose;

const DEFAULT_RIG_JSON: &str = include_str!("../data/default_rig.json");

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("degenerate point: cannot project the camera center")]
    DegeneratePoint,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("reading rig {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing rig: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleSphereIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub xi: f64,
    pub alpha: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub pixel: Vector2<f64>,
    pub valid: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Unprojected {
    pub direction: Vector3<f64>,
    pub valid: bool,
}

impl DoubleSphereIntrinsics {
    /// Pinhole limit (`xi = alpha = 0`) with a centered principal point.
    pub fn pinhole(f: f64, width: u32, height: u32) -> Self {
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            xi: 0.0,
            alpha: 0.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.xi, self.alpha]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(CameraError::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::InvalidIntrinsics("image size must be positive".into()));
        }
        Ok(())
    }

    /// Same lens at a different image resolution.
    pub fn scaled(&self, factor: f64) -> Self {
        let width = ((self.width as f64 * factor).round() as u32).max(1);
        let height = ((self.height as f64 * factor).round() as u32).max(1);
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..*self
        }
    }

    /// Projection validity weight: points with `z > -w2 * |p|` project.
    pub fn validity_w2(&self) -> f64 {
        let a = self.alpha;
        let w1 = if a <= 0.5 { a / (1.0 - a) } else { (1.0 - a) / a };
        (w1 + self.xi) / (2.0 * w1 * self.xi + self.xi * self.xi + 1.0).sqrt()
    }

    pub fn project(&self, point: &Vector3<f64>) -> Result<Projected, CameraError> {
        let (x, y, z) = (point.x, point.y, point.z);
        let d1 = (x * x + y * y + z * z).sqrt();
        if d1 == 0.0 || !d1.is_finite() {
            return Err(CameraError::DegeneratePoint);
        }
        let valid = z > -self.validity_w2() * d1;
        let zs = self.xi * d1 + z;
        let d2 = (x * x + y * y + zs * zs).sqrt();
        let denom = self.alpha * d2 + (1.0 - self.alpha) * zs;
        let pixel = Vector2::new(self.fx * x / denom + self.cx, self.fy * y / denom + self.cy);
        Ok(Projected {
            pixel,
            valid: valid && denom > 0.0 && pixel.iter().all(|v| v.is_finite()),
        })
    }

    pub fn unproject(&self, pixel: &Vector2<f64>) -> Unprojected {
        let mx = (pixel.x - self.cx) / self.fx;
        let my = (pixel.y - self.cy) / self.fy;
        let r2 = mx * mx + my * my;
        let a = self.alpha;
        let mut valid = !(a > 0.5 && r2 > 1.0 / (2.0 * a - 1.0));
        let inner = 1.0 - (2.0 * a - 1.0) * r2;
        if inner < 0.0 {
            valid = false;
        }
        let mz = (1.0 - a * a * r2) / (a * inner.max(0.0).sqrt() + 1.0 - a);
        let disc = mz * mz + (1.0 - self.xi * self.xi) * r2;
        if disc < 0.0 {
            valid = false;
        }
        let k = (mz * self.xi + disc.max(0.0).sqrt()) / (mz * mz + r2);
        let dir = Vector3::new(k * mx, k * my, k * mz - self.xi);
        let n = dir.norm();
        if n == 0.0 || !n.is_finite() {
            return Unprojected {
                direction: Vector3::z(),
                valid: false,
            };
        }
        Unprojected {
            direction: dir / n,
            valid,
        }
    }

    /// Continuous image bounds: the image covers `[0, width] x [0, height]`
    /// in pixel-edge coordinates.
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x <= self.width as f64 && pixel.y <= self.height as f64
    }

    fn horizontal_direction_visible(&self, angle: f64, sign: f64) -> bool {
        let dir = Vector3::new(sign * angle.sin(), 0.0, angle.cos());
        match self.project(&dir) {
            Ok(p) => p.valid && self.contains(&p.pixel),
            Err(_) => false,
        }
    }

    /// Horizontal field of view in radians: the angular span of directions in
    /// the optical x-z plane that are both projectable and land inside the
    /// image. Each side is scanned outward from the optical axis and the first
    /// transition is refined by bisection.
    pub fn horizontal_fov(&self) -> f64 {
        const STEPS: usize = 3600;
        let mut total = 0.0;
        for sign in [-1.0, 1.0] {
            let step = PI / STEPS as f64;
            let mut inside = 0.0;
            let mut outside = None;
            for i in 1..=STEPS {
                let angle = i as f64 * step;
                if self.horizontal_direction_visible(angle, sign) {
                    inside = angle;
                } else {
                    outside = Some(angle);
                    break;
                }
            }
            let Some(mut hi) = outside else {
                total += PI;
                continue;
            };
            let mut lo = inside;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if self.horizontal_direction_visible(mid, sign) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            total += lo;
        }
        total
    }
}

/// Rotation of an optical frame (x right, y down, z forward) inside a body
/// frame with x forward and z up.
pub fn optical_in_body() -> UnitQuaternion<f64> {
    let m = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// Two double-sphere cameras and the pose of the right camera in the left
/// camera frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StereoRig {
    #[serde(default = "schema_version", skip_deserializing)]
    schema: u32,
    pub left: DoubleSphereIntrinsics,
    pub right: DoubleSphereIntrinsics,
    pub t_l_r: Pose,
}

fn schema_version() -> u32 {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl StereoRig {
    pub fn new(left: DoubleSphereIntrinsics, right: DoubleSphereIntrinsics, t_l_r: Pose) -> Self {
        Self {
            schema: 1,
            left,
            right,
            t_l_r,
        }
    }

    /// The checked-in reference rig.
    pub fn default_rig() -> Self {
        Self::from_json(DEFAULT_RIG_JSON).expect("bundled rig is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, CameraError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let value = match value {
            serde_json::Value::Object(mut map) => {
                match map.remove("schema") {
                    None | Some(serde_json::Value::Number(_)) => {}
                    Some(other) => return Err(CameraError::InvalidRig(format!("bad schema field {other}"))),
                }
                serde_json::Value::Object(map)
            }
            other => other,
        };
        let rig: StereoRig = serde_json::from_value(value)?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CameraError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CameraError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rig serializes")
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        self.left.validate()?;
        self.right.validate()?;
        if !self.t_l_r.is_finite() {
            return Err(CameraError::InvalidRig("non-finite extrinsics".into()));
        }
        Ok(())
    }

    pub fn baseline(&self) -> f64 {
        self.t_l_r.translation().norm()
    }

    pub fn intrinsics(&self, side: Side) -> &DoubleSphereIntrinsics {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// Pose of each camera relative to the left camera.
    pub fn camera_offset(&self, side: Side) -> Pose {
        match side {
            Side::Left => Pose::identity(),
            Side::Right => self.t_l_r,
        }
    }
}
