//! Constant-distance spherical reprojection.
//!
//! A captured wide-angle frame is treated as if painted on a sphere of
//! radius `r` centered at the camera's optical center. Every output pixel of
//! the (pinhole) virtual eye casts a ray, intersects that sphere, and looks
//! the hit point up in the source frame through the double-sphere model.
//! With no translation between eye and camera the lookup is exact for any
//! scene depth; translation introduces the bearing error given by
//! [`angular_error`].
//!
//! Pixel coordinates use the edge convention throughout: the image covers
//! `[0, width] x [0, height]` and pixel `(i, j)` has its center at
//! `(i + 0.5, j + 0.5)`.

use std::io::Write;
use std::time::{Duration, Instant};

use image::RgbImage;
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{DoubleSphereIntrinsics, Side, StereoRig};
use crate::exec::Execution;
use crate::geom::Pose;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("eye outside projection sphere: eye is {distance:.4} m from the camera, radius is {radius} m")]
    EyeOutsideSphere { distance: f64, radius: f64 },
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("frame is {got_w}x{got_h} but intrinsics expect {want_w}x{want_h}")]
    FrameSize {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("invalid distance range: {0}")]
    InvalidRange(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Sphere radius in meters.
    pub r: f64,
    pub out_width: u32,
    pub out_height: u32,
    /// Vertical field of view of the eye camera, radians.
    pub eye_fov: f64,
    pub background: [u8; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            r: 1.0,
            out_width: 800,
            out_height: 800,
            eye_fov: 90f64.to_radians(),
            background: [0, 0, 0],
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(RenderError::InvalidConfig(format!(
                "radius must be positive, got {}",
                self.r
            )));
        }
        if self.out_width == 0 || self.out_height == 0 {
            return Err(RenderError::InvalidConfig("output size must be positive".into()));
        }
        if !(self.eye_fov > 0.0 && self.eye_fov < std::f64::consts::PI) {
            return Err(RenderError::InvalidConfig(format!(
                "eye field of view must lie in (0, pi), got {}",
                self.eye_fov
            )));
        }
        Ok(())
    }

    pub fn eye_camera(&self) -> EyeCamera {
        EyeCamera::new(self.out_width, self.out_height, self.eye_fov)
    }
}

/// Ideal pinhole standing in for one HMD eye. Square pixels, centered
/// principal point, `z` forward, `y` down.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EyeCamera {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl EyeCamera {
    pub fn new(width: u32, height: u32, vertical_fov: f64) -> Self {
        Self {
            width,
            height,
            focal: (height as f64 / 2.0) / (vertical_fov / 2.0).tan(),
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    /// Unnormalized ray through a pixel-edge coordinate.
    pub fn ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.focal, (pixel.y - self.cy) / self.focal, 1.0)
    }

    pub fn project(&self, dir: &Vector3<f64>) -> Option<Vector2<f64>> {
        (dir.z > 0.0).then(|| {
            Vector2::new(
                self.focal * dir.x / dir.z + self.cx,
                self.focal * dir.y / dir.z + self.cy,
            )
        })
    }
}

#[derive(Clone, Debug)]
pub struct EyeView {
    pub image: RgbImage,
    pub t_world_eye: Pose,
    pub render_time: Duration,
}

#[derive(Clone, Debug)]
pub struct StereoView {
    pub left: EyeView,
    pub right: EyeView,
    pub total_time: Duration,
}

/// Per-output-pixel mapping from eye pixels to source pixels for one
/// (camera pose, eye pose, radius) configuration.
#[derive(Clone, Copy, Debug)]
pub struct SphereLookup {
    eye: EyeCamera,
    intr: DoubleSphereIntrinsics,
    /// Eye position in the camera frame.
    origin: [f64; 3],
    /// Columns of the eye-to-camera rotation, pre-divided by the eye focal
    /// length for the first two.
    col_x: [f64; 3],
    col_y: [f64; 3],
    col_z: [f64; 3],
    /// `|origin|^2 - r^2`, negative inside the sphere.
    c0: f64,
    r: f64,
    validity_w2: f64,
}

impl SphereLookup {
    pub fn new(
        intr: &DoubleSphereIntrinsics,
        t_world_cam: &Pose,
        t_world_eye: &Pose,
        cfg: &RenderConfig,
    ) -> Result<Self, RenderError> {
        cfg.validate()?;
        let t_cam_eye = t_world_cam.inverse().compose(t_world_eye);
        let o = *t_cam_eye.translation();
        let distance = o.norm();
        if distance >= cfg.r {
            return Err(RenderError::EyeOutsideSphere {
                distance,
                radius: cfg.r,
            });
        }
        let eye = cfg.eye_camera();
        let rot = t_cam_eye.rotation().to_rotation_matrix();
        let m = rot.matrix();
        let col = |c: usize, scale: f64| [m[(0, c)] * scale, m[(1, c)] * scale, m[(2, c)] * scale];
        Ok(Self {
            eye,
            intr: *intr,
            origin: [o.x, o.y, o.z],
            col_x: col(0, 1.0 / eye.focal),
            col_y: col(1, 1.0 / eye.focal),
            col_z: col(2, 1.0),
            c0: distance * distance - cfg.r * cfg.r,
            r: cfg.r,
            validity_w2: intr.validity_w2(),
        })
    }

    pub fn eye(&self) -> &EyeCamera {
        &self.eye
    }

    #[inline(always)]
    fn ray_dir(&self, px: f64, py: f64) -> [f64; 3] {
        let x = px - self.eye.cx;
        let y = py - self.eye.cy;
        [
            self.col_x[0] * x + self.col_y[0] * y + self.col_z[0],
            self.col_x[1] * x + self.col_y[1] * y + self.col_z[1],
            self.col_x[2] * x + self.col_y[2] * y + self.col_z[2],
        ]
    }

    #[inline(always)]
    fn hit(&self, d: [f64; 3]) -> [f64; 3] {
        let o = self.origin;
        let a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let b = o[0] * d[0] + o[1] * d[1] + o[2] * d[2];
        // c0 < 0, so the discriminant is positive and the larger root is the
        // only intersection in front of the eye.
        let t = (-b + (b * b - a * self.c0).sqrt()) / a;
        [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]
    }

    /// Point on the sphere (camera frame) seen through an eye pixel.
    pub fn sphere_point(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::from(self.hit(self.ray_dir(pixel.x, pixel.y)))
    }

    /// Source-frame pixel for an eye pixel, `None` when the sphere point is
    /// outside the camera model's valid domain.
    #[inline(always)]
    fn source_pixel_raw(&self, px: f64, py: f64) -> Option<(f64, f64)> {
        let p = self.hit(self.ray_dir(px, py));
        // |p| == r on the sphere, so the first double-sphere radius is r.
        let d1 = self.r;
        if p[2] <= -self.validity_w2 * d1 {
            return None;
        }
        let intr = &self.intr;
        let zs = intr.xi * d1 + p[2];
        let d2 = (p[0] * p[0] + p[1] * p[1] + zs * zs).sqrt();
        let denom = intr.alpha * d2 + (1.0 - intr.alpha) * zs;
        if denom <= 0.0 {
            return None;
        }
        let inv = 1.0 / denom;
        Some((intr.fx * p[0] * inv + intr.cx, intr.fy * p[1] * inv + intr.cy))
    }

    pub fn source_pixel(&self, pixel: &Vector2<f64>) -> Option<Vector2<f64>> {
        self.source_pixel_raw(pixel.x, pixel.y).map(|(u, v)| Vector2::new(u, v))
    }
}

/// Single-precision copy of a [`SphereLookup`] for the per-pixel hot loop.
#[derive(Clone, Copy, Debug)]
struct RowKernel {
    eye_cx: f32,
    eye_cy: f32,
    origin: [f32; 3],
    col_x: [f32; 3],
    col_y: [f32; 3],
    col_z: [f32; 3],
    c0: f32,
    z_min: f32,
    xi_r: f32,
    alpha: f32,
    fx: f32,
    fy: f32,
    cx: f32,
    cy: f32,
}

/// Source coordinate written for eye pixels with no valid lookup; far
/// outside any image.
const NO_SOURCE: f32 = -1.0e9;

impl RowKernel {
    fn new(l: &SphereLookup) -> Self {
        let f3 = |v: [f64; 3]| [v[0] as f32, v[1] as f32, v[2] as f32];
        Self {
            eye_cx: l.eye.cx as f32,
            eye_cy: l.eye.cy as f32,
            origin: f3(l.origin),
            col_x: f3(l.col_x),
            col_y: f3(l.col_y),
            col_z: f3(l.col_z),
            c0: l.c0 as f32,
            z_min: (-l.validity_w2 * l.r) as f32,
            xi_r: (l.intr.xi * l.r) as f32,
            alpha: l.intr.alpha as f32,
            fx: l.intr.fx as f32,
            fy: l.intr.fy as f32,
            cx: l.intr.cx as f32,
            cy: l.intr.cy as f32,
        }
    }

    /// Source pixel coordinates for every pixel of eye row `j`. Branch-free
    /// so the loop vectorizes; invalid lookups get [`NO_SOURCE`].
    #[inline(always)]
    fn map_row_body(&self, j: usize, us: &mut [f32], vs: &mut [f32]) {
        let y = j as f32 + 0.5 - self.eye_cy;
        let base = [
            self.col_y[0] * y + self.col_z[0],
            self.col_y[1] * y + self.col_z[1],
            self.col_y[2] * y + self.col_z[2],
        ];
        let o = self.origin;
        for (i, (u, v)) in us.iter_mut().zip(vs.iter_mut()).enumerate() {
            let x = i as f32 + 0.5 - self.eye_cx;
            let d0 = self.col_x[0] * x + base[0];
            let d1 = self.col_x[1] * x + base[1];
            let d2 = self.col_x[2] * x + base[2];
            let a = d0 * d0 + d1 * d1 + d2 * d2;
            let b = o[0] * d0 + o[1] * d1 + o[2] * d2;
            let t = (-b + (b * b - a * self.c0).sqrt()) / a;
            let px = o[0] + t * d0;
            let py = o[1] + t * d1;
            let pz = o[2] + t * d2;
            let zs = self.xi_r + pz;
            let dd = (px * px + py * py + zs * zs).sqrt();
            let denom = self.alpha * dd + (1.0 - self.alpha) * zs;
            let valid = pz > self.z_min && denom > 0.0;
            let inv = 1.0 / denom;
            *u = if valid { self.fx * px * inv + self.cx } else { NO_SOURCE };
            *v = if valid { self.fy * py * inv + self.cy } else { NO_SOURCE };
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn map_row_avx2(&self, j: usize, us: &mut [f32], vs: &mut [f32]) {
        self.map_row_body(j, us, vs)
    }

    fn map_row(&self, j: usize, us: &mut [f32], vs: &mut [f32]) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: AVX2 support was checked just above. The body only uses
            // IEEE add/mul/div/sqrt, so both paths produce identical bits.
            unsafe { self.map_row_avx2(j, us, vs) };
            return;
        }
        self.map_row_body(j, us, vs)
    }
}

/// Renders one output row (`row.len() == 3 * width`); `scratch` holds the
/// per-row source coordinates.
fn render_row(
    kernel: &RowKernel,
    frame: &RgbImage,
    j: usize,
    row: &mut [u8],
    scratch: &mut (Vec<f32>, Vec<f32>),
    background: [u8; 3],
) {
    let width = row.len() / 3;
    let (us, vs) = scratch;
    us.resize(width, 0.0);
    vs.resize(width, 0.0);
    kernel.map_row(j, us, vs);

    let w = frame.width() as usize;
    let h = frame.height() as usize;
    let (wf, hf) = (w as f32, h as f32);
    let src = frame.as_raw();
    for ((out, &u), &v) in row.chunks_exact_mut(3).zip(us.iter()).zip(vs.iter()) {
        let color = if u >= 0.0 && v >= 0.0 && u <= wf && v <= hf {
            bilinear_fixed(src, w, h, u, v)
        } else {
            background
        };
        out.copy_from_slice(&color);
    }
}

/// Clamp-to-edge bilinear sample at pixel-edge coordinates `(u, v)` inside
/// `[0, w] x [0, h]`, with 8-bit fixed-point weights.
#[inline(always)]
fn bilinear_fixed(src: &[u8], w: usize, h: usize, u: f32, v: f32) -> [u8; 3] {
    // The texel-center coordinate is u - 0.5. Shifting by one whole texel
    // keeps the value positive so truncation floors.
    let xf = ((u + 0.5) * 256.0) as i32;
    let yf = ((v + 0.5) * 256.0) as i32;
    let x0 = (xf >> 8) - 1;
    let y0 = (yf >> 8) - 1;
    let ax = (xf & 255) as u32;
    let ay = (yf & 255) as u32;
    let max_x = w as i32 - 1;
    let max_y = h as i32 - 1;
    let i00 = (y0.clamp(0, max_y) as usize * w + x0.clamp(0, max_x) as usize) * 3;
    let i10 = (y0.clamp(0, max_y) as usize * w + (x0 + 1).clamp(0, max_x) as usize) * 3;
    let i01 = ((y0 + 1).clamp(0, max_y) as usize * w + x0.clamp(0, max_x) as usize) * 3;
    let i11 = ((y0 + 1).clamp(0, max_y) as usize * w + (x0 + 1).clamp(0, max_x) as usize) * 3;
    let (p00, p10, p01, p11) = (
        &src[i00..i00 + 3],
        &src[i10..i10 + 3],
        &src[i01..i01 + 3],
        &src[i11..i11 + 3],
    );
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as u32 * (256 - ax) + p10[c] as u32 * ax;
        let bottom = p01[c] as u32 * (256 - ax) + p11[c] as u32 * ax;
        out[c] = ((top * (256 - ay) + bottom * ay + 32768) >> 16) as u8;
    }
    out
}

/// Double-precision reference sample at texel-center coordinates.
#[cfg(test)]
fn bilinear(src: &[u8], w: usize, h: usize, x: f64, y: f64) -> [u8; 3] {
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let x0 = x0f as isize;
    let y0 = y0f as isize;
    let cx0 = x0.clamp(0, w as isize - 1) as usize;
    let cx1 = (x0 + 1).clamp(0, w as isize - 1) as usize;
    let cy0 = y0.clamp(0, h as isize - 1) as usize;
    let cy1 = (y0 + 1).clamp(0, h as isize - 1) as usize;
    let r0 = cy0 * w * 3;
    let r1 = cy1 * w * 3;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let p00 = src[r0 + cx0 * 3 + c] as f64;
        let p10 = src[r0 + cx1 * 3 + c] as f64;
        let p01 = src[r1 + cx0 * 3 + c] as f64;
        let p11 = src[r1 + cx1 * 3 + c] as f64;
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        *o = (top + (bottom - top) * fy + 0.5) as u8;
    }
    out
}

fn check_frame(frame: &RgbImage, intr: &DoubleSphereIntrinsics) -> Result<(), RenderError> {
    if frame.width() != intr.width || frame.height() != intr.height {
        return Err(RenderError::FrameSize {
            got_w: frame.width(),
            got_h: frame.height(),
            want_w: intr.width,
            want_h: intr.height,
        });
    }
    Ok(())
}

/// Re-renders `frame`, captured by a camera at `t_world_cam`, for an eye at
/// `t_world_eye`.
pub fn reproject(
    frame: &RgbImage,
    intr: &DoubleSphereIntrinsics,
    t_world_cam: &Pose,
    t_world_eye: &Pose,
    cfg: &RenderConfig,
    exec: Execution,
) -> Result<EyeView, RenderError> {
    let start = Instant::now();
    check_frame(frame, intr)?;
    let lookup = SphereLookup::new(intr, t_world_cam, t_world_eye, cfg)?;
    let width = cfg.out_width as usize;
    let mut buf = vec![0u8; width * cfg.out_height as usize * 3];
    let kernel = RowKernel::new(&lookup);
    exec.for_each_row_init(
        &mut buf,
        width * 3,
        || (Vec::with_capacity(width), Vec::with_capacity(width)),
        |scratch, j, row| render_row(&kernel, frame, j, row, scratch, cfg.background),
    );
    let image = RgbImage::from_raw(cfg.out_width, cfg.out_height, buf).expect("buffer sized to image");
    Ok(EyeView {
        image,
        t_world_eye: *t_world_eye,
        render_time: start.elapsed(),
    })
}

/// Eye poses relative to the operator head frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EyeOffsets {
    pub left: Pose,
    pub right: Pose,
}

impl EyeOffsets {
    /// Eyes placed exactly where the rig's cameras sit relative to the left
    /// camera, so a head pose equal to the capture pose reproduces the
    /// cameras' viewpoints.
    pub fn matching_rig(rig: &StereoRig) -> Self {
        Self {
            left: rig.camera_offset(Side::Left),
            right: rig.camera_offset(Side::Right),
        }
    }
}

/// Renders both eyes. `t_world_rig` is the left camera pose when the frames
/// were captured, `t_world_head` the current virtual head pose; each eye is
/// rendered against the sphere around its own camera.
#[allow(clippy::too_many_arguments)]
pub fn render_stereo(
    left: &RgbImage,
    right: &RgbImage,
    rig: &StereoRig,
    t_world_rig: &Pose,
    t_world_head: &Pose,
    offsets: &EyeOffsets,
    cfg: &RenderConfig,
    exec: Execution,
) -> Result<StereoView, RenderError> {
    let start = Instant::now();
    let cam_left = t_world_rig.compose(&rig.camera_offset(Side::Left));
    let cam_right = t_world_rig.compose(&rig.camera_offset(Side::Right));
    let eye_left = t_world_head.compose(&offsets.left);
    let eye_right = t_world_head.compose(&offsets.right);
    let left = reproject(left, &rig.left, &cam_left, &eye_left, cfg, exec)?;
    let right = reproject(right, &rig.right, &cam_right, &eye_right, cfg, exec)?;
    Ok(StereoView {
        left,
        right,
        total_time: start.elapsed(),
    })
}

/// Bearing error (radians) of a point at true distance `d` seen from an eye
/// displaced by `dx` perpendicular to the viewing ray, when the scene is
/// assumed to lie on a sphere of radius `r`. Zero at `d == r`, negative for
/// closer objects, saturating at `π/2 - atan(r / dx)` for distant ones.
pub fn angular_error(d: f64, dx: f64, r: f64) -> f64 {
    if dx == 0.0 {
        return 0.0;
    }
    (d / dx).atan() - (r / dx).atan()
}

/// Limit of [`angular_error`] as `d` grows without bound.
pub fn angular_error_asymptote(dx: f64, r: f64) -> f64 {
    if dx == 0.0 {
        return 0.0;
    }
    std::f64::consts::FRAC_PI_2 - (r / dx).atan()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorSample {
    pub d: f64,
    pub gamma: f64,
}

/// `steps` evenly spaced samples of [`angular_error`] over `[d_min, d_max]`,
/// both endpoints included. Distances are rounded to 1e-12 m so grid points
/// that should land on round values (such as `d == r`) do.
pub fn error_curve(dx: f64, r: f64, d_min: f64, d_max: f64, steps: usize) -> Result<Vec<ErrorSample>, RenderError> {
    if !(d_min > 0.0 && d_max > d_min && d_max.is_finite()) {
        return Err(RenderError::InvalidRange(format!(
            "need 0 < d_min < d_max, got [{d_min}, {d_max}]"
        )));
    }
    if steps < 2 {
        return Err(RenderError::InvalidRange(format!("need at least 2 steps, got {steps}")));
    }
    if !(r > 0.0) || !(dx >= 0.0) {
        return Err(RenderError::InvalidRange(format!(
            "need r > 0 and dx >= 0, got r={r}, dx={dx}"
        )));
    }
    let span = d_max - d_min;
    Ok((0..steps)
        .map(|i| {
            let d = if i == steps - 1 {
                d_max
            } else {
                let raw = d_min + span * i as f64 / (steps - 1) as f64;
                (raw * 1e12).round() / 1e12
            };
            ErrorSample {
                d,
                gamma: angular_error(d, dx, r),
            }
        })
        .collect())
}

/// CSV with columns `d_m,gamma_deg`.
pub fn write_error_curve_csv<W: Write>(mut out: W, samples: &[ErrorSample]) -> std::io::Result<()> {
    writeln!(out, "d_m,gamma_deg")?;
    for s in samples {
        writeln!(out, "{},{}", s.d, s.gamma.to_degrees())?;
    }
    Ok(())
}

/// Intensity-weighted centroid (pixel-edge coordinates) of all pixels whose
/// channel sum exceeds `threshold`.
pub fn bright_centroid(image: &RgbImage, threshold: u32) -> Option<Vector2<f64>> {
    let mut sum = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for (x, y, p) in image.enumerate_pixels() {
        let v = p.0.iter().map(|&c| c as u32).sum::<u32>();
        if v > threshold {
            let w = (v - threshold) as f64;
            sum += w;
            sx += w * (x as f64 + 0.5);
            sy += w * (y as f64 + 0.5);
        }
    }
    (sum > 0.0).then(|| Vector2::new(sx / sum, sy / sum))
}
