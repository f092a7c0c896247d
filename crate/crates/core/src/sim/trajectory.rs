//! Operator head trajectories in VR space (x forward, z up).

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::Pose;
use crate::sim::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    /// Seconds from the start.
    pub t: f64,
    pub pose: Pose,
}

/// Keyframes joined by smoothstep easing: a cubic in time with zero velocity
/// at every keyframe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    #[serde(default = "schema_version")]
    pub schema: u32,
    pub keyframes: Vec<Keyframe>,
}

fn schema_version() -> u32 {
    1
}

/// Operator standing with eyes at 1.6 m, looking along +x.
pub fn operator_rest() -> Pose {
    Pose::from_translation(Vector3::new(0.0, 0.0, 1.6))
}

fn ease(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

impl Trajectory {
    pub fn new(keyframes: Vec<Keyframe>) -> Result<Self, SimError> {
        let t = Self { schema: 1, keyframes };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.keyframes.is_empty() {
            return Err(SimError::InvalidTrajectory("no keyframes".into()));
        }
        if !self.keyframes.iter().all(|k| k.t.is_finite() && k.pose.is_finite()) {
            return Err(SimError::InvalidTrajectory("non-finite keyframe".into()));
        }
        if self.keyframes[0].t < 0.0 {
            return Err(SimError::InvalidTrajectory("negative start time".into()));
        }
        if let Some(w) = self.keyframes.windows(2).find(|w| w[1].t <= w[0].t) {
            return Err(SimError::InvalidTrajectory(format!(
                "timestamps must increase ({} then {})",
                w[0].t, w[1].t
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let t: Trajectory = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes")
    }

    pub fn duration(&self) -> f64 {
        self.keyframes.last().map(|k| k.t).unwrap_or(0.0)
    }

    /// Pose at `t`, held constant outside the keyframe span.
    pub fn sample(&self, t: f64) -> Pose {
        let k = &self.keyframes;
        if t <= k[0].t {
            return k[0].pose;
        }
        let hi = k.partition_point(|kf| kf.t < t);
        if hi == k.len() {
            return k[k.len() - 1].pose;
        }
        let (a, b) = (&k[hi - 1], &k[hi]);
        a.pose.interpolate(&b.pose, ease((t - a.t) / (b.t - a.t)))
    }

    /// Rest, a 0.4 m lateral sweep peaking at 0.5 m/s, rest, and back.
    pub fn sweep() -> Self {
        let p0 = operator_rest();
        let p1 = p0 * Pose::from_translation(Vector3::new(0.0, 0.4, 0.0));
        // Smoothstep peaks at 1.5x the mean speed: 1.5 · 0.4 m / 1.2 s.
        let kf = |t, pose| Keyframe { t, pose };
        Self::new(vec![
            kf(0.0, p0),
            kf(1.0, p0),
            kf(2.2, p1),
            kf(3.2, p1),
            kf(4.4, p0),
            kf(5.4, p0),
        ])
        .expect("valid keyframes")
    }

    /// Seeded wandering motion, mostly translational, with pauses.
    pub fn dynamic(seed: u64, duration: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rest = operator_rest();
        let mut keyframes = vec![Keyframe { t: 0.0, pose: rest }];
        let mut t = 0.5;
        keyframes.push(Keyframe { t, pose: rest });
        while t < duration {
            t += rng.gen_range(0.6..1.2);
            let pose = if rng.gen_bool(0.2) {
                keyframes.last().expect("non-empty").pose
            } else {
                let r = UnitQuaternion::from_euler_angles(
                    0.0,
                    rng.gen_range(-5f64..5.0).to_radians(),
                    rng.gen_range(-15f64..15.0).to_radians(),
                );
                let p = Vector3::new(
                    rng.gen_range(-0.12..0.12),
                    rng.gen_range(-0.12..0.12),
                    rng.gen_range(-0.06..0.06),
                );
                Pose::new(r, rest.translation() + p)
            };
            keyframes.push(Keyframe { t, pose });
        }
        Self::new(keyframes).expect("valid keyframes")
    }
}
