//! Train/test split and the parameter-space nearest-neighbor baseline.

use portrait_core::face_model::FaceParameters;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

/// Index splitting a sequence of `n` frames into the first two thirds
/// (rounded up) for training and the rest for testing.
pub fn self_reenactment_split(n: usize) -> Result<usize> {
    if n < 3 {
        return Err(EvalError::TooFewFrames { needed: 3, got: n });
    }
    Ok((2 * n).div_ceil(3))
}

/// Splits any per-frame slice at [`self_reenactment_split`].
pub fn split_frames<T>(frames: &[T]) -> Result<(&[T], &[T])> {
    Ok(frames.split_at(self_reenactment_split(frames.len())?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborWeights {
    pub pose: f64,
    pub expression: f64,
}

impl Default for NeighborWeights {
    fn default() -> Self {
        NeighborWeights {
            pose: 1.0,
            expression: 1.0,
        }
    }
}

/// Geodesic rotation angle plus translation distance in units of
/// `head_scale`.
pub fn pose_distance(a: &FaceParameters, b: &FaceParameters, head_scale: f64) -> f64 {
    rotation_angle(a, b) + (a.translation - b.translation).norm() / head_scale
}

/// Geodesic angle via the chord form, exact zero for equal rotations.
fn rotation_angle(a: &FaceParameters, b: &FaceParameters) -> f64 {
    let p = a.rotation.quaternion().coords;
    let mut q = b.rotation.quaternion().coords;
    if p.dot(&q) < 0.0 {
        q = -q;
    }
    4.0 * (p - q).norm().atan2((p + q).norm())
}

pub fn expression_distance(a: &FaceParameters, b: &FaceParameters) -> f64 {
    a.delta
        .iter()
        .zip(&b.delta)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn neighbor_distance(a: &FaceParameters, b: &FaceParameters, weights: NeighborWeights, head_scale: f64) -> f64 {
    weights.pose * pose_distance(a, b, head_scale) + weights.expression * expression_distance(a, b)
}

/// Index and distance of the closest corpus entry; ties go to the lowest
/// index.
pub fn nearest_neighbor(
    query: &FaceParameters,
    corpus: &[FaceParameters],
    weights: NeighborWeights,
    head_scale: f64,
) -> Result<(usize, f64)> {
    if head_scale.is_nan() || head_scale <= 0.0 {
        return Err(EvalError::Config("head scale must be positive".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in corpus.iter().enumerate() {
        let d = neighbor_distance(query, c, weights, head_scale);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.ok_or(EvalError::EmptyCorpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        assert_eq!(self_reenactment_split(3).unwrap(), 2);
        assert_eq!(self_reenactment_split(2000).unwrap(), 1334);
        assert_eq!(self_reenactment_split(300).unwrap(), 200);
        assert!(self_reenactment_split(2).is_err());
        let v: Vec<u32> = (0..10).collect();
        let (a, b) = split_frames(&v).unwrap();
        assert_eq!([a, b].concat(), v);
        assert_eq!(a.len(), 7);
    }
}
