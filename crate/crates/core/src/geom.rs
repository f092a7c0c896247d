//! Rigid-body transforms.
//!
//! [`Pose`] is a unit quaternion plus a translation in meters. It maps points
//! from its child frame into its parent frame, so `a.compose(&b)` is the
//! homogeneous-matrix product `a · b`. [`Twist`] is the 6-vector local
//! parameterization used by the calibration solver.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rotation angles closer than this to π are rejected by [`Pose::log`].
pub const LOG_SINGULARITY_MARGIN: f64 = 1e-6;

const SMALL_ANGLE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("parameterization singularity: rotation angle {angle} rad is within {margin} of pi")]
    Singularity { angle: f64, margin: f64 },
    #[error("invalid quaternion: {0}")]
    InvalidQuaternion(String),
}

#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

/// Local 6-DoF increment: axis-angle rotation (radians) followed by the
/// translational part (meters) of the se(3) element.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    // Renormalize so repeated composition cannot drift off the unit sphere.
    let q = UnitQuaternion::new_normalize(*q.quaternion());
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left Jacobian of SO(3); maps the se(3) translational part to the pose
/// translation.
fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    let t2 = theta * theta;
    let (a, b) = if theta < SMALL_ANGLE {
        (
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let half_sin = (0.5 * theta).sin();
        (2.0 * half_sin * half_sin / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + k * a + k * k * b
}

fn left_jacobian_inverse(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    let c = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    /// Builds a pose from a raw `(w, x, y, z)` quaternion, normalizing it.
    pub fn from_wxyz(q: [f64; 4], translation: [f64; 3]) -> Result<Self, GeomError> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(GeomError::InvalidQuaternion(format!("norm {norm}")));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::InvalidQuaternion("non-finite translation".into()));
        }
        Ok(Self::new(
            UnitQuaternion::new_normalize(quat),
            Vector3::from(translation),
        ))
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    pub fn from_rotation(r: UnitQuaternion<f64>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self · other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose::new(r, -(r * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Rotation angle of `self⁻¹ · other`.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Linear translation, shortest-arc spherical rotation. `s` is clamped to
    /// `[0, 1]`; the endpoints are returned exactly.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        let s = s.clamp(0.0, 1.0);
        if s == 0.0 {
            return *self;
        }
        if s == 1.0 {
            return *other;
        }
        let relative = canonical(self.rotation.inverse() * other.rotation);
        let rotation = self.rotation * UnitQuaternion::from_scaled_axis(relative.scaled_axis() * s);
        let translation = self.translation + (other.translation - self.translation) * s;
        Pose::new(rotation, translation)
    }

    pub fn exp(twist: &Twist) -> Pose {
        let rotation = UnitQuaternion::from_scaled_axis(twist.rotation);
        let translation = left_jacobian(&twist.rotation) * twist.translation;
        Pose::new(rotation, translation)
    }

    pub fn log(&self) -> Result<Twist, GeomError> {
        let angle = self.rotation.angle();
        if (PI - angle).abs() < LOG_SINGULARITY_MARGIN {
            return Err(GeomError::Singularity {
                angle,
                margin: LOG_SINGULARITY_MARGIN,
            });
        }
        let omega = self.rotation.scaled_axis();
        Ok(Twist {
            rotation: omega,
            translation: left_jacobian_inverse(&omega) * self.translation,
        })
    }

    /// Right-perturbation retraction `self · exp(delta)`.
    pub fn retract(&self, delta: &Twist) -> Pose {
        self.compose(&Pose::exp(delta))
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.rotation.coords.iter().all(|v| v.is_finite())
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.quaternion_wxyz();
        let t = self.translation;
        write!(
            f,
            "Pose {{ q: [{:.9}, {:.9}, {:.9}, {:.9}], t: [{:.9}, {:.9}, {:.9}] }}",
            q[0], q[1], q[2], q[3], t.x, t.y, t.z
        )
    }
}

impl Twist {
    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            rotation: Vector3::new(v[0], v[1], v[2]),
            translation: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn norm(&self) -> f64 {
        (self.rotation.norm_squared() + self.translation.norm_squared()).sqrt()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    q: [f64; 4],
    t: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let t = self.translation;
        PoseRepr {
            q: self.quaternion_wxyz(),
            t: [t.x, t.y, t.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        Pose::from_wxyz(repr.q, repr.t).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Homogeneous matrix built straight from the quaternion formula, without
    /// going through nalgebra's rotation types.
    fn matrix_of(p: &Pose) -> Matrix4<f64> {
        let [w, x, y, z] = p.quaternion_wxyz();
        let t = p.translation();
        Matrix4::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            t.x,
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            t.y,
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let q = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let t = [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ];
        Pose::from_wxyz(q, t).unwrap()
    }

    fn assert_pose_close(a: &Pose, b: &Pose, tol: f64) {
        assert!(a.angle_to(b) < tol, "rotation differs: {a:?} vs {b:?}");
        assert!(a.distance_to(b) < tol, "translation differs: {a:?} vs {b:?}");
    }

    fn rot_z(deg: f64) -> Pose {
        Pose::from_axis_angle(&Vector3::z(), deg.to_radians())
    }

    #[test]
    fn compose_identity_and_quarter_turns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng);
        assert_pose_close(&Pose::identity().compose(&p), &p, 1e-12);
        assert_pose_close(&rot_z(90.0).compose(&rot_z(90.0)), &rot_z(180.0), 1e-12);
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let expected = matrix_of(&a) * matrix_of(&b);
            let got = matrix_of(&a.compose(&b));
            assert!((expected - got).abs().max() < 1e-9);
        }
    }

    #[test]
    fn inverse_cases() {
        assert_pose_close(&Pose::identity().inverse(), &Pose::identity(), 0.0 + 1e-15);
        let t = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)).inverse();
        assert_eq!(*t.translation(), Vector3::new(-1.0, -2.0, -3.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = random_pose(&mut rng);
            let oracle = matrix_of(&p).try_inverse().unwrap();
            assert!((oracle - matrix_of(&p.inverse())).abs().max() < 1e-9);
            assert_pose_close(&p.compose(&p.inverse()), &Pose::identity(), 1e-9);
        }
    }

    #[test]
    fn interpolation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_pose(&mut rng);
        assert_pose_close(&p.interpolate(&p, 0.5), &p, 1e-12);
        assert_pose_close(&Pose::identity().interpolate(&rot_z(90.0), 0.5), &rot_z(45.0), 1e-12);
    }

    #[test]
    fn interpolation_endpoints_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_pose(&mut rng);
        let b = random_pose(&mut rng);
        assert_eq!(a.interpolate(&b, 0.0), a);
        assert_eq!(a.interpolate(&b, 1.0), b);
    }

    #[test]
    fn interpolation_angle_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let s: f64 = rng.gen_range(0.0..1.0);
            // Oracle: shortest-arc angle from the quaternion dot product.
            let qa = a.quaternion_wxyz();
            let qb = b.quaternion_wxyz();
            let dot: f64 = qa.iter().zip(&qb).map(|(x, y)| x * y).sum::<f64>().abs();
            let total = 2.0 * dot.min(1.0).acos();
            let mid = a.interpolate(&b, s);
            assert_abs_diff_eq!(a.angle_to(&mid), s * total, epsilon = 1e-9);
            assert_abs_diff_eq!(mid.angle_to(&b), (1.0 - s) * total, epsilon = 1e-9);
        }
    }

    #[test]
    fn exp_examples() {
        assert_pose_close(&Pose::exp(&Twist::default()), &Pose::identity(), 1e-15);
        let quarter = Twist::from_slice(&[0.0, 0.0, PI / 2.0, 0.0, 0.0, 0.0]);
        assert_pose_close(&Pose::exp(&quarter), &rot_z(90.0), 1e-12);
    }

    #[test]
    fn exp_log_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = random_pose(&mut rng);
            if (PI - p.rotation_angle()).abs() < 1e-3 {
                continue;
            }
            let back = Pose::exp(&p.log().unwrap());
            assert_pose_close(&back, &p, 1e-9);
        }
    }

    #[test]
    fn exp_log_small_angles() {
        for angle in [0.0, 1e-12, 1e-8, 1e-6, 1e-5, 2e-5, 1e-3] {
            let t = Twist::from_slice(&[angle, -0.5 * angle, 0.3 * angle, 0.4, -1.0, 2.0]);
            let back = Pose::exp(&t).log().unwrap();
            for (x, y) in back.to_array().iter().zip(t.to_array()) {
                assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn log_rejects_half_turn() {
        let half = rot_z(180.0);
        assert!(matches!(half.log(), Err(GeomError::Singularity { .. })));
        let err = half.log().unwrap_err().to_string();
        assert!(err.contains("parameterization singularity"));
    }

    #[test]
    fn json_layout() {
        let p = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"q":[1.0,0.0,0.0,0.0],"t":[1.0,2.0,3.0]}"#);
        let back: Pose = serde_json::from_str(r#"{"q":[2,0,0,0],"t":[1,2,3]}"#).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Pose>(r#"{"q":[0,0,0,0],"t":[1,2,3]}"#).is_err());
    }

    #[test]
    fn negative_w_is_canonicalized() {
        let p = Pose::from_wxyz([-0.5, 0.5, 0.5, 0.5], [0.0; 3]).unwrap();
        assert!(p.quaternion_wxyz()[0] >= 0.0);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (prop::array::uniform4(-1.0f64..1.0), prop::array::uniform3(-5.0f64..5.0)).prop_filter_map(
            "non-degenerate quaternion",
            |(q, t)| {
                let n: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                (n > 1e-3).then(|| Pose::from_wxyz(q, t).unwrap())
            },
        )
    }

    proptest! {
        #[test]
        fn composition_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!(left.angle_to(&right) < 1e-9);
            prop_assert!(left.distance_to(&right) < 1e-9);
        }

        #[test]
        fn quaternion_stays_unit(a in arb_pose(), b in arb_pose()) {
            let mut p = a;
            for _ in 0..50 {
                p = p.compose(&b).compose(&a.inverse());
            }
            let q = p.quaternion_wxyz();
            let n: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
            prop_assert!(q[0] >= 0.0);
        }

        #[test]
        fn log_exp_round_trip(
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in 0.0f64..3.1,
            rho in prop::array::uniform3(-3.0f64..3.0),
        ) {
            let axis = Vector3::from(axis);
            prop_assume!(axis.norm() > 1e-3);
            let t = Twist::new(axis.normalize() * angle, Vector3::from(rho));
            let back = Pose::exp(&t).log().unwrap();
            for (x, y) in back.to_array().iter().zip(t.to_array()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
