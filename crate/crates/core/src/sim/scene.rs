//! Synthetic scenes and fisheye capture by ray casting.

use image::RgbImage;
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::DoubleSphereIntrinsics;
use crate::exec::Execution;
use crate::geom::Pose;
use crate::sim::SimError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Texture {
    Solid([u8; 3]),
    Checker { cells: [u32; 2], colors: [[u8; 3]; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    /// Rectangle in the local xy plane of `pose`, centered on its origin.
    Quad {
        pose: Pose,
        size: [f64; 2],
        texture: Texture,
    },
    /// Small disk always facing the viewer; `angular_size` is its apparent
    /// diameter in radians.
    Point {
        position: [f64; 3],
        color: [u8; 3],
        angular_size: f64,
    },
}

impl Primitive {
    fn anchor(&self) -> Vector3<f64> {
        match self {
            Primitive::Quad { pose, .. } => *pose.translation(),
            Primitive::Point { position, .. } => Vector3::from(*position),
        }
    }

    /// Distance along the unit ray `o + t·d` and the color at the hit.
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, [u8; 3])> {
        match self {
            Primitive::Quad { pose, size, texture } => {
                let inv = pose.inverse();
                let ol = inv.transform_point(o);
                let dl = inv.rotate_vector(d);
                if dl.z.abs() < 1e-12 {
                    return None;
                }
                let t = -ol.z / dl.z;
                if t <= 0.0 {
                    return None;
                }
                let p = ol + dl * t;
                let (hw, hh) = (size[0] / 2.0, size[1] / 2.0);
                if p.x.abs() > hw || p.y.abs() > hh {
                    return None;
                }
                let color = match texture {
                    Texture::Solid(c) => *c,
                    Texture::Checker { cells, colors } => {
                        let i = (((p.x + hw) / size[0]) * cells[0] as f64).floor() as i64;
                        let j = (((p.y + hh) / size[1]) * cells[1] as f64).floor() as i64;
                        colors[((i + j).rem_euclid(2)) as usize]
                    }
                };
                Some((t, color))
            }
            Primitive::Point {
                position,
                color,
                angular_size,
            } => {
                let to = Vector3::from(*position) - o;
                let dist = to.norm();
                let cos = to.dot(d) / dist;
                (cos >= (angular_size / 2.0).cos()).then_some((dist, *color))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    #[serde(default = "schema_version")]
    pub schema: u32,
    pub sky: [u8; 3],
    pub primitives: Vec<Primitive>,
}

fn schema_version() -> u32 {
    1
}

fn checker(pose: Pose, size: [f64; 2], cells: [u32; 2], a: [u8; 3], b: [u8; 3]) -> Primitive {
    Primitive::Quad {
        pose,
        size,
        texture: Texture::Checker { cells, colors: [a, b] },
    }
}

impl Scene {
    /// A small room around a robot head at about 1.2 m height looking along
    /// +x: checkered walls, a floor and a bright target.
    pub fn lab() -> Self {
        use nalgebra::UnitQuaternion;
        use std::f64::consts::FRAC_PI_2;
        let wall = |x: f64, y: f64, yaw: f64| {
            // Local z is the wall normal; local y points up.
            let r = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw)
                * UnitQuaternion::from_euler_angles(FRAC_PI_2, 0.0, 0.0)
                * UnitQuaternion::from_euler_angles(0.0, FRAC_PI_2, 0.0);
            Pose::new(r, Vector3::new(x, y, 1.25))
        };
        Self {
            schema: 1,
            sky: [135, 170, 210],
            primitives: vec![
                checker(wall(3.0, 0.0, 0.0), [6.0, 2.5], [12, 5], [230, 230, 230], [40, 40, 120]),
                checker(
                    wall(0.0, 2.5, FRAC_PI_2),
                    [6.0, 2.5],
                    [12, 5],
                    [220, 200, 160],
                    [90, 60, 30],
                ),
                checker(
                    wall(0.0, -2.5, -FRAC_PI_2),
                    [6.0, 2.5],
                    [12, 5],
                    [200, 220, 200],
                    [30, 90, 40],
                ),
                checker(
                    Pose::from_translation(Vector3::new(0.5, 0.0, 0.0)),
                    [6.0, 5.0],
                    [12, 10],
                    [120, 120, 120],
                    [70, 70, 70],
                ),
                checker(wall(1.2, -0.4, 0.0), [0.4, 0.3], [4, 3], [250, 250, 250], [10, 10, 10]),
                Primitive::Point {
                    position: [1.5, 0.3, 1.3],
                    color: [255, 40, 40],
                    angular_size: 2f64.to_radians(),
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (i, p) in self.primitives.iter().enumerate() {
            let d = p.anchor().norm();
            if !(d > 0.05 && d < 100.0) {
                return Err(SimError::InvalidScene(format!(
                    "primitive {i} at {d:.3} m from the origin (allowed 0.05..100 m)"
                )));
            }
            match p {
                Primitive::Quad { size, texture, .. } => {
                    if !(size[0] > 0.0 && size[1] > 0.0) {
                        return Err(SimError::InvalidScene(format!(
                            "primitive {i}: quad size must be positive"
                        )));
                    }
                    if let Texture::Checker { cells, .. } = texture {
                        if cells[0] == 0 || cells[1] == 0 {
                            return Err(SimError::InvalidScene(format!("primitive {i}: checker needs cells")));
                        }
                    }
                }
                Primitive::Point { angular_size, .. } => {
                    if !(*angular_size > 0.0 && *angular_size < std::f64::consts::PI) {
                        return Err(SimError::InvalidScene(format!("primitive {i}: bad angular size")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    /// Color seen along a world ray, or the sky.
    pub fn trace(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> [u8; 3] {
        let mut best = (f64::INFINITY, self.sky);
        for p in &self.primitives {
            if let Some((t, c)) = p.hit(o, d) {
                if t < best.0 {
                    best = (t, c);
                }
            }
        }
        best.1
    }
}

/// Per-pixel unprojected ray directions of one camera.
#[derive(Clone, Debug)]
pub struct Capturer {
    intr: DoubleSphereIntrinsics,
    /// Unit direction per pixel in the camera frame; `None` outside the
    /// valid domain.
    rays: Vec<Option<Vector3<f64>>>,
    /// Pixel value for directions the camera cannot see.
    pub invalid_color: [u8; 3],
}

impl Capturer {
    pub fn new(intr: &DoubleSphereIntrinsics) -> Self {
        let (w, h) = (intr.width as usize, intr.height as usize);
        let mut rays = Vec::with_capacity(w * h);
        for j in 0..h {
            for i in 0..w {
                let u = intr.unproject(&Vector2::new(i as f64 + 0.5, j as f64 + 0.5));
                rays.push(u.valid.then_some(u.direction));
            }
        }
        Self {
            intr: *intr,
            rays,
            invalid_color: [0, 0, 0],
        }
    }

    pub fn intrinsics(&self) -> &DoubleSphereIntrinsics {
        &self.intr
    }

    /// Renders `scene` as seen by a camera at `t_world_cam`.
    pub fn capture(&self, scene: &Scene, t_world_cam: &Pose, exec: Execution) -> RgbImage {
        let w = self.intr.width as usize;
        let mut buf = vec![0u8; w * self.intr.height as usize * 3];
        let origin = *t_world_cam.translation();
        exec.for_each_row(&mut buf, w * 3, |j, row| {
            for (i, px) in row.chunks_exact_mut(3).enumerate() {
                let c = match &self.rays[j * w + i] {
                    Some(d) => scene.trace(&origin, &t_world_cam.rotate_vector(d)),
                    None => self.invalid_color,
                };
                px.copy_from_slice(&c);
            }
        });
        RgbImage::from_raw(self.intr.width, self.intr.height, buf).expect("buffer sized to image")
    }
}

/// One-off capture; builds the ray table each call.
pub fn capture(scene: &Scene, t_world_cam: &Pose, intr: &DoubleSphereIntrinsics, exec: Execution) -> RgbImage {
    Capturer::new(intr).capture(scene, t_world_cam, exec)
}
