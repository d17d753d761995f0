use std::f64::consts::FRAC_PI_4;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::basis::{FaceBasis, ModelDims};
use crate::error::{Error, Result};

/// Gaze angles are bounded to this magnitude (radians).
pub const GAZE_LIMIT: f64 = FRAC_PI_4;
pub const QUATERNION_TOLERANCE: f64 = 1e-9;
pub const SH_COEFFS: usize = 27;

/// Per-frame model state: rigid pose, identity, expression, gaze and
/// illumination.
///
/// Illumination is stored channel-major: `sh[9 * c + b]` is band function `b`
/// for color channel `c`. Gaze is `[left yaw, left pitch, right yaw, right
/// pitch]` where "left" is the eye on the image-left side; positive yaw moves
/// the pupil right and positive pitch moves it down in the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsWire", into = "ParamsWire")]
pub struct FaceParameters {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub gaze: [f64; 4],
    pub sh: [f64; SH_COEFFS],
}

#[derive(Serialize, Deserialize)]
struct ParamsWire {
    /// `[w, x, y, z]`
    rotation: [f64; 4],
    translation: [f64; 3],
    alpha: Vec<f64>,
    beta: Vec<f64>,
    delta: Vec<f64>,
    gaze: [f64; 4],
    sh: Vec<f64>,
}

impl From<FaceParameters> for ParamsWire {
    fn from(p: FaceParameters) -> Self {
        let q = p.rotation.quaternion();
        ParamsWire {
            rotation: [q.w, q.i, q.j, q.k],
            translation: [p.translation.x, p.translation.y, p.translation.z],
            alpha: p.alpha,
            beta: p.beta,
            delta: p.delta,
            gaze: p.gaze,
            sh: p.sh.to_vec(),
        }
    }
}

impl TryFrom<ParamsWire> for FaceParameters {
    type Error = Error;

    fn try_from(w: ParamsWire) -> Result<Self> {
        let [qw, qx, qy, qz] = w.rotation;
        let rotation = unit_quaternion(Quaternion::new(qw, qx, qy, qz))?;
        let sh: [f64; SH_COEFFS] =
            w.sh.as_slice()
                .try_into()
                .map_err(|_| Error::length("sh", SH_COEFFS, w.sh.len()))?;
        let p = FaceParameters {
            rotation,
            translation: Vector3::from(w.translation),
            alpha: w.alpha,
            beta: w.beta,
            delta: w.delta,
            gaze: w.gaze,
            sh,
        };
        p.check_gaze()?;
        Ok(p)
    }
}

/// Accepts a quaternion only if it is already unit length.
pub fn unit_quaternion(q: Quaternion<f64>) -> Result<UnitQuaternion<f64>> {
    let n = q.norm();
    if (n - 1.0).abs() > QUATERNION_TOLERANCE {
        return Err(Error::NonUnitQuaternion(n));
    }
    Ok(UnitQuaternion::new_unchecked(q))
}

/// Head distance from the camera in the default pose.
pub const DEFAULT_DEPTH: f64 = 3.5;

/// Ambient light plus a key light from the upper front, per channel.
pub fn default_illumination() -> [f64; SH_COEFFS] {
    let mut sh = [0.0; SH_COEFFS];
    // light arriving from the upper front (camera side, above)
    let l = Vector3::new(0.25, -0.45, -0.85).normalize();
    let c1 = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
    let tint = [1.0, 0.97, 0.93];
    for (c, t) in tint.iter().enumerate() {
        sh[9 * c] = 0.85 / crate::image_formation::sh::Y00 * t;
        sh[9 * c + 1] = 0.3 * l.y / c1 * t;
        sh[9 * c + 2] = 0.3 * l.z / c1 * t;
        sh[9 * c + 3] = 0.3 * l.x / c1 * t;
    }
    sh
}

impl FaceParameters {
    /// Frontal neutral face at the default depth under default light.
    pub fn neutral(dims: ModelDims) -> Self {
        FaceParameters {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::new(0.0, 0.0, DEFAULT_DEPTH),
            alpha: vec![0.0; dims.alpha],
            beta: vec![0.0; dims.beta],
            delta: vec![0.0; dims.delta],
            gaze: [0.0; 4],
            sh: default_illumination(),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            alpha: self.alpha.len(),
            beta: self.beta.len(),
            delta: self.delta.len(),
        }
    }

    /// Number of free scalars (three each for rotation and translation).
    pub fn scalar_count(&self) -> usize {
        self.dims().parameter_count()
    }

    fn check_gaze(&self) -> Result<()> {
        for &g in &self.gaze {
            if !(-GAZE_LIMIT..=GAZE_LIMIT).contains(&g) || !g.is_finite() {
                return Err(Error::OutOfRange {
                    value: g,
                    lo: -GAZE_LIMIT,
                    hi: GAZE_LIMIT,
                });
            }
        }
        Ok(())
    }

    /// Checks the invariants against a basis.
    pub fn validate(&self, basis: &FaceBasis) -> Result<()> {
        let d = basis.dims();
        if self.alpha.len() != d.alpha {
            return Err(Error::length("alpha", d.alpha, self.alpha.len()));
        }
        if self.beta.len() != d.beta {
            return Err(Error::length("beta", d.beta, self.beta.len()));
        }
        if self.delta.len() != d.delta {
            return Err(Error::length("delta", d.delta, self.delta.len()));
        }
        let n = self.rotation.quaternion().norm();
        if (n - 1.0).abs() > QUATERNION_TOLERANCE {
            return Err(Error::NonUnitQuaternion(n));
        }
        self.check_gaze()
    }

    /// Clamp gaze into bounds, returning the indices that were clamped.
    pub fn clamp_gaze(&mut self) -> Vec<usize> {
        let mut clamped = Vec::new();
        for (i, g) in self.gaze.iter_mut().enumerate() {
            let c = g.clamp(-GAZE_LIMIT, GAZE_LIMIT);
            if c != *g {
                clamped.push(i);
                *g = c;
            }
        }
        clamped
    }
}

/// `v_hat_i = R v_i + t` for a flat `3N` vertex vector.
pub fn apply_rigid_pose(
    vertices: &[f64],
    rotation: &UnitQuaternion<f64>,
    translation: &Vector3<f64>,
) -> Result<Vec<Vector3<f64>>> {
    let n = rotation.quaternion().norm();
    if (n - 1.0).abs() > QUATERNION_TOLERANCE {
        return Err(Error::NonUnitQuaternion(n));
    }
    if !vertices.len().is_multiple_of(3) {
        return Err(Error::InvalidArgument(
            "vertex vector length not a multiple of 3".into(),
        ));
    }
    let r = rotation.to_rotation_matrix();
    Ok(vertices
        .chunks_exact(3)
        .map(|c| r * Vector3::new(c[0], c[1], c[2]) + translation)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn parameter_count_is_261() {
        let p = FaceParameters::neutral(ModelDims::default());
        assert_eq!(p.scalar_count(), 261);
    }

    #[test]
    fn pose_identity_and_half_turn() {
        let v = [1.0, 0.0, 0.0, 0.3, -2.0, 5.0];
        let out = apply_rigid_pose(&v, &UnitQuaternion::identity(), &Vector3::zeros()).unwrap();
        assert_eq!(out[0], Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(out[1], Vector3::new(0.3, -2.0, 5.0));

        let t = Vector3::new(0.5, 1.0, 2.0);
        let r = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI);
        let out = apply_rigid_pose(&v[..3], &r, &t).unwrap();
        assert!((out[0] - (Vector3::new(-1.0, 0.0, 0.0) + t)).norm() < 1e-12);
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let q = UnitQuaternion::new_unchecked(Quaternion::new(1.1, 0.0, 0.0, 0.0));
        assert!(matches!(
            apply_rigid_pose(&[0.0; 3], &q, &Vector3::zeros()),
            Err(Error::NonUnitQuaternion(_))
        ));
        let json = r#"{"rotation":[2,0,0,0],"translation":[0,0,0],"alpha":[],"beta":[],"delta":[],"gaze":[0,0,0,0],"sh":[0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0]}"#;
        assert!(serde_json::from_str::<FaceParameters>(json).is_err());
    }

    #[test]
    fn gaze_bounds_enforced_on_load() {
        let mut p = FaceParameters::neutral(ModelDims {
            alpha: 1,
            beta: 1,
            delta: 1,
        });
        p.gaze[2] = 1.0;
        let s = serde_json::to_string(&p).unwrap();
        assert!(serde_json::from_str::<FaceParameters>(&s).is_err());
        assert_eq!(p.clamp_gaze(), vec![2]);
        assert_eq!(p.gaze[2], GAZE_LIMIT);
    }
}
