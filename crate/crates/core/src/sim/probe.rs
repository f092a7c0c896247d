//! Bearing measurements on rendered point targets: a bright point is
//! captured by the fisheye camera, reprojected to an eye, located by its
//! centroid and turned back into a direction.

use nalgebra::Vector3;

use crate::camera::DoubleSphereIntrinsics;
use crate::exec::Execution;
use crate::geom::Pose;
use crate::render::{bright_centroid, reproject, RenderConfig};
use crate::sim::scene::{Capturer, Primitive, Scene};
use crate::sim::SimError;

/// Channel-sum threshold separating the target from the black sky.
const CENTROID_THRESHOLD: u32 = 48;

pub struct BearingProbe {
    capturer: Capturer,
    /// Apparent diameter of the target from the camera, radians.
    pub target_size: f64,
    pub render: RenderConfig,
}

impl BearingProbe {
    pub fn new(intr: &DoubleSphereIntrinsics, render: RenderConfig) -> Self {
        Self {
            capturer: Capturer::new(intr),
            target_size: 1f64.to_radians(),
            render,
        }
    }

    /// Direction (unit, camera frame) in which an eye at `t_cam_eye` sees
    /// a point target placed at `target` in the camera frame, after
    /// rendering against a sphere of radius `r`. `None` if the target is
    /// not visible in the eye view.
    pub fn rendered_direction(
        &self,
        target: &Vector3<f64>,
        t_cam_eye: &Pose,
        r: f64,
        exec: Execution,
    ) -> Result<Option<Vector3<f64>>, SimError> {
        let scene = Scene {
            schema: 1,
            sky: [0, 0, 0],
            primitives: vec![Primitive::Point {
                position: [target.x, target.y, target.z],
                color: [255, 255, 255],
                angular_size: self.target_size,
            }],
        };
        scene.validate()?;
        let cam = Pose::identity();
        let frame = self.capturer.capture(&scene, &cam, exec);
        let cfg = RenderConfig { r, ..self.render };
        let view = reproject(&frame, self.capturer.intrinsics(), &cam, t_cam_eye, &cfg, exec)?;
        let Some(c) = bright_centroid(&view.image, CENTROID_THRESHOLD) else {
            return Ok(None);
        };
        let ray = cfg.eye_camera().ray(&c);
        Ok(Some(t_cam_eye.rotate_vector(&ray).normalize()))
    }

    /// Rendered bearing error for a target at distance `d` on the camera
    /// boresight seen from an eye displaced by `dx` sideways, measured as
    /// the true minus the rendered elevation above the displacement axis.
    /// Directly comparable with [`crate::render::angular_error`].
    pub fn translation_error(&self, d: f64, dx: f64, r: f64, exec: Execution) -> Result<f64, SimError> {
        let target = Vector3::new(0.0, 0.0, d);
        let eye = Pose::from_translation(Vector3::new(dx, 0.0, 0.0));
        let seen = self
            .rendered_direction(&target, &eye, r, exec)?
            .ok_or_else(|| SimError::Analysis(format!("target at {d} m not visible")))?;
        let truth = target - eye.translation();
        let elevation = |v: &Vector3<f64>| v.z.atan2(-v.x);
        Ok(elevation(&truth) - elevation(&seen))
    }

    /// Angle between the true and the rendered direction of `target` for an
    /// eye at the camera center with orientation `rotation`.
    pub fn rotation_error(
        &self,
        target: &Vector3<f64>,
        rotation: &Pose,
        r: f64,
        exec: Execution,
    ) -> Result<f64, SimError> {
        let eye = Pose::from_rotation(*rotation.rotation());
        let seen = self
            .rendered_direction(target, &eye, r, exec)?
            .ok_or_else(|| SimError::Analysis("target not visible".into()))?;
        Ok(seen.angle(&target.normalize()))
    }
}
