//! Relative transfer of pose, expression and gaze from a source performance
//! onto a target sequence, and direct parameter edits.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face_model::{FaceParameters, GAZE_LIMIT};

/// Which components travel from source to target, and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSpec {
    pub pose: bool,
    pub expression: bool,
    pub gaze: bool,
    pub identity_geometry: bool,
    pub rotation_scale: f64,
    pub translation_scale: f64,
    /// Per-axis translation mask; `[true, true, false]` keeps the motion in
    /// the camera plane.
    pub translation_axes: [bool; 3],
    pub source_reference_frame: usize,
    pub target_reference_frame: usize,
}

impl Default for TransferSpec {
    fn default() -> Self {
        TransferSpec {
            pose: true,
            expression: true,
            gaze: true,
            identity_geometry: false,
            rotation_scale: 1.0,
            translation_scale: 1.0,
            translation_axes: [true; 3],
            source_reference_frame: 0,
            target_reference_frame: 0,
        }
    }
}

impl TransferSpec {
    /// Expression only: pose and gaze stay with the target.
    pub fn dubbing() -> Self {
        TransferSpec {
            pose: false,
            gaze: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pose || self.expression || self.gaze || self.identity_geometry) {
            return Err(Error::InvalidArgument("transfer spec enables no component".into()));
        }
        for s in [self.rotation_scale, self.translation_scale] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::OutOfRange {
                    value: s,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
        }
        Ok(())
    }
}

/// Motion of one frame relative to a reference frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeParams {
    /// `R R_ref^-1`
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub delta: Vec<f64>,
    pub gaze: [f64; 4],
}

pub fn make_relative(params: &FaceParameters, reference: &FaceParameters) -> Result<RelativeParams> {
    if params.delta.len() != reference.delta.len() {
        return Err(Error::length("delta", reference.delta.len(), params.delta.len()));
    }
    Ok(RelativeParams {
        rotation: params.rotation * reference.rotation.inverse(),
        translation: params.translation - reference.translation,
        delta: params.delta.iter().zip(&reference.delta).map(|(a, b)| a - b).collect(),
        gaze: std::array::from_fn(|i| params.gaze[i] - reference.gaze[i]),
    })
}

/// Inverse of [`make_relative`]: the reference moved by the relative motion.
/// Identity and illumination come from the reference.
pub fn apply_relative(reference: &FaceParameters, rel: &RelativeParams) -> Result<FaceParameters> {
    if rel.delta.len() != reference.delta.len() {
        return Err(Error::length("delta", reference.delta.len(), rel.delta.len()));
    }
    let mut out = reference.clone();
    out.rotation = rel.rotation * reference.rotation;
    out.translation = reference.translation + rel.translation;
    out.delta = reference.delta.iter().zip(&rel.delta).map(|(a, b)| a + b).collect();
    out.gaze = std::array::from_fn(|i| reference.gaze[i] + rel.gaze[i]);
    out.clamp_gaze();
    Ok(out)
}

/// Rotation scaled along its geodesic from the identity.
pub fn scale_rotation(r: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    if s == 1.0 {
        *r
    } else {
        UnitQuaternion::from_scaled_axis(r.scaled_axis() * s)
    }
}

/// Result of [`apply_transfer`].
#[derive(Clone, Debug, PartialEq)]
pub struct TransferOutput {
    pub params: Vec<FaceParameters>,
    /// Output frames that reused the last target frame because the target
    /// sequence was shorter than the source.
    pub repeated_target_frames: usize,
    /// Frames whose gaze had to be clamped into bounds.
    pub clamped_gaze_frames: Vec<usize>,
}

/// Builds the modified target sequence, one output frame per source frame.
///
/// Target identity (α, β) and illumination are always kept unless
/// `identity_geometry` is set, in which case α is copied from the source.
/// When source and target share the same reference value for a component and
/// it is unscaled, the relative copy reduces to copying the source value,
/// which is done verbatim.
pub fn apply_transfer(
    source: &[FaceParameters],
    target: &[FaceParameters],
    spec: &TransferSpec,
) -> Result<TransferOutput> {
    spec.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidArgument(
            "transfer needs non-empty source and target".into(),
        ));
    }
    let sref = source.get(spec.source_reference_frame).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "source reference frame {} out of range",
            spec.source_reference_frame
        ))
    })?;
    let tref = target.get(spec.target_reference_frame).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "target reference frame {} out of range",
            spec.target_reference_frame
        ))
    })?;
    if sref.delta.len() != tref.delta.len() {
        return Err(Error::length("delta", tref.delta.len(), sref.delta.len()));
    }
    if spec.identity_geometry && sref.alpha.len() != tref.alpha.len() {
        return Err(Error::length("alpha", tref.alpha.len(), sref.alpha.len()));
    }
    for p in source.iter().chain(target) {
        if p.delta.len() != tref.delta.len() {
            return Err(Error::length("delta", tref.delta.len(), p.delta.len()));
        }
    }

    let same_rotation = sref.rotation == tref.rotation && spec.rotation_scale == 1.0;
    let same_translation =
        sref.translation == tref.translation && spec.translation_scale == 1.0 && spec.translation_axes == [true; 3];
    let same_delta = sref.delta == tref.delta;
    let same_gaze = sref.gaze == tref.gaze;

    let mut out = TransferOutput {
        params: Vec::with_capacity(source.len()),
        repeated_target_frames: source.len().saturating_sub(target.len()),
        clamped_gaze_frames: Vec::new(),
    };
    for (f, s) in source.iter().enumerate() {
        let mut p = target[f.min(target.len() - 1)].clone();
        if spec.pose {
            p.rotation = if same_rotation {
                s.rotation
            } else {
                let d = s.rotation * sref.rotation.inverse();
                let r = scale_rotation(&d, spec.rotation_scale) * tref.rotation;
                UnitQuaternion::new_normalize(r.into_inner())
            };
            p.translation = if same_translation {
                s.translation
            } else {
                let d = s.translation - sref.translation;
                let masked = Vector3::from_fn(|i, _| if spec.translation_axes[i] { d[i] } else { 0.0 });
                tref.translation + masked * spec.translation_scale
            };
        }
        if spec.expression {
            p.delta = if same_delta {
                s.delta.clone()
            } else {
                (0..s.delta.len())
                    .map(|k| tref.delta[k] + (s.delta[k] - sref.delta[k]))
                    .collect()
            };
        }
        if spec.gaze {
            p.gaze = if same_gaze {
                s.gaze
            } else {
                std::array::from_fn(|i| tref.gaze[i] + (s.gaze[i] - sref.gaze[i]))
            };
            if !p.clamp_gaze().is_empty() {
                out.clamped_gaze_frames.push(f);
            }
        }
        if spec.identity_geometry {
            p.alpha = s.alpha.clone();
        }
        out.params.push(p);
    }
    if out.repeated_target_frames > 0 {
        log::warn!(
            "target shorter than source; last target frame repeated {} time(s)",
            out.repeated_target_frames
        );
    }
    Ok(out)
}

/// One coefficient set to or shifted by a value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexedValue {
    pub index: usize,
    pub value: f64,
}

/// User edits of one frame's parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterEdit {
    /// Axis-angle rotation composed on the left of the current rotation.
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
    /// Additive expression offsets.
    pub expression: Vec<IndexedValue>,
    pub gaze: [f64; 4],
    /// Identity geometry coefficients replaced outright.
    pub identity: Vec<IndexedValue>,
}

impl ParameterEdit {
    pub fn is_zero(&self) -> bool {
        self.rotation == [0.0; 3]
            && self.translation == [0.0; 3]
            && self.expression.iter().all(|e| e.value == 0.0)
            && self.gaze == [0.0; 4]
            && self.identity.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditOutcome {
    pub params: FaceParameters,
    /// Gaze entries that were clamped into `[-GAZE_LIMIT, GAZE_LIMIT]`.
    pub clamped_gaze: Vec<usize>,
}

pub fn edit_parameters(params: &FaceParameters, edit: &ParameterEdit) -> Result<EditOutcome> {
    let mut p = params.clone();
    let finite = edit
        .rotation
        .iter()
        .chain(&edit.translation)
        .chain(&edit.gaze)
        .all(|v| v.is_finite())
        && edit
            .expression
            .iter()
            .chain(&edit.identity)
            .all(|e| e.value.is_finite());
    if !finite {
        return Err(Error::InvalidArgument("edit contains non-finite values".into()));
    }
    for e in &edit.expression {
        if e.index >= p.delta.len() {
            return Err(Error::InvalidArgument(format!(
                "expression index {} out of range",
                e.index
            )));
        }
    }
    for e in &edit.identity {
        if e.index >= p.alpha.len() {
            return Err(Error::InvalidArgument(format!(
                "identity index {} out of range",
                e.index
            )));
        }
    }
    if edit.rotation != [0.0; 3] {
        let r = UnitQuaternion::from_scaled_axis(Vector3::from(edit.rotation)) * p.rotation;
        p.rotation = UnitQuaternion::new_normalize(r.into_inner());
    }
    if edit.translation != [0.0; 3] {
        p.translation += Vector3::from(edit.translation);
    }
    for e in &edit.expression {
        p.delta[e.index] += e.value;
    }
    for e in &edit.identity {
        p.alpha[e.index] = e.value;
    }
    for (g, d) in p.gaze.iter_mut().zip(&edit.gaze) {
        *g += d;
    }
    let clamped_gaze = p.clamp_gaze();
    if !clamped_gaze.is_empty() {
        log::warn!("gaze clamped to +-{GAZE_LIMIT} for entries {clamped_gaze:?}");
    }
    Ok(EditOutcome {
        params: p,
        clamped_gaze,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face_model::ModelDims;

    fn dims() -> ModelDims {
        ModelDims {
            alpha: 3,
            beta: 3,
            delta: 4,
        }
    }

    fn yaw(deg: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), deg.to_radians())
    }

    #[test]
    fn relative_to_itself_is_identity() {
        let mut p = FaceParameters::neutral(dims());
        p.rotation = yaw(12.0);
        p.delta[1] = 0.3;
        let r = make_relative(&p, &p).unwrap();
        assert!(r.rotation.angle() < 1e-15);
        assert_eq!(r.translation, Vector3::zeros());
        assert!(r.delta.iter().all(|v| *v == 0.0));
        assert_eq!(r.gaze, [0.0; 4]);
    }

    #[test]
    fn yaw_on_top_of_reference() {
        let mut reference = FaceParameters::neutral(dims());
        reference.rotation = UnitQuaternion::from_euler_angles(0.2, -0.1, 0.3);
        let mut p = reference.clone();
        p.rotation = yaw(10.0) * reference.rotation;
        let r = make_relative(&p, &reference).unwrap();
        assert!(r.rotation.angle_to(&yaw(10.0)) < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(TransferSpec::default().validate().is_ok());
        let none = TransferSpec {
            pose: false,
            expression: false,
            gaze: false,
            ..Default::default()
        };
        assert!(none.validate().is_err());
        let big = TransferSpec {
            rotation_scale: 1.5,
            ..Default::default()
        };
        assert!(big.validate().is_err());
    }

    #[test]
    fn spec_parses_from_flat_toml_like_json() {
        let s: TransferSpec = serde_json::from_str(r#"{"pose": false, "rotation_scale": 0.5}"#).unwrap();
        assert!(!s.pose && s.expression && s.rotation_scale == 0.5);
        assert!(serde_json::from_str::<TransferSpec>(r#"{"poze": true}"#).is_err());
    }

    #[test]
    fn zero_edit_is_identity() {
        let mut p = FaceParameters::neutral(dims());
        p.rotation = UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3);
        let out = edit_parameters(&p, &ParameterEdit::default()).unwrap();
        assert_eq!(out.params, p);
        assert!(ParameterEdit::default().is_zero());
    }

    #[test]
    fn gaze_edit_clamped_and_reported() {
        let p = FaceParameters::neutral(dims());
        let edit = ParameterEdit {
            gaze: [2.0, 0.0, 0.0, -0.1],
            ..Default::default()
        };
        let out = edit_parameters(&p, &edit).unwrap();
        assert_eq!(out.clamped_gaze, vec![0]);
        assert_eq!(out.params.gaze[0], GAZE_LIMIT);
        assert_eq!(out.params.gaze[3], -0.1);
    }

    #[test]
    fn bad_edit_index_rejected() {
        let p = FaceParameters::neutral(dims());
        let edit = ParameterEdit {
            expression: vec![IndexedValue { index: 9, value: 1.0 }],
            ..Default::default()
        };
        assert!(edit_parameters(&p, &edit).is_err());
    }
}
