//! Per-pixel photometric error.

use portrait_core::face_model::{FaceBasis, FaceParameters};
use portrait_core::image_formation::{render_fragments, CameraIntrinsics, ColorSpace, PosedMesh, RasterImage};

use crate::error::{EvalError, Result};

/// Largest possible per-pixel error: black against white.
pub const MAX_PIXEL_ERROR: f64 = 441.672_955_930_063_7;

/// Euclidean RGB distance per pixel, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ErrorMap {
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean over the pixels where `mask` is set; `None` if none are.
    pub fn masked_mean(&self, mask: &[bool]) -> Option<f64> {
        let (sum, n) = self
            .data
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .fold((0.0, 0usize), |(s, n), (e, _)| (s + e, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

pub fn photometric_error(pred: &RasterImage, truth: &RasterImage) -> Result<ErrorMap> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(EvalError::Shape(pred.width, pred.height, truth.width, truth.height));
    }
    if pred.space != ColorSpace::Raw || truth.space != ColorSpace::Raw {
        return Err(EvalError::ColorSpace);
    }
    let data = pred
        .data
        .chunks_exact(3)
        .zip(truth.data.chunks_exact(3))
        .map(|(a, b)| {
            let (r, g, bl) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
            (r * r + g * g + bl * bl).sqrt()
        })
        .collect();
    Ok(ErrorMap {
        width: pred.width,
        height: pred.height,
        data,
    })
}

/// Pixels covered by the rendered head.
pub fn foreground_mask(basis: &FaceBasis, params: &FaceParameters, cam: &CameraIntrinsics) -> Result<Vec<bool>> {
    let posed = PosedMesh::new(basis, params)?;
    let frags = render_fragments(basis, &posed, cam);
    let (w, h) = (cam.width(), cam.height());
    Ok((0..w * h).map(|i| frags.get(i % w, i / w).is_some()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_against_white() {
        let b = RasterImage::black(2, 2, ColorSpace::Raw);
        let mut w = b.clone();
        w.data.fill(255.0);
        let e = photometric_error(&b, &w).unwrap();
        assert!(e.data.iter().all(|v| (v - MAX_PIXEL_ERROR).abs() < 1e-9));
        assert!((MAX_PIXEL_ERROR - (3.0f64 * 255.0 * 255.0).sqrt()).abs() < 1e-12);
        assert_eq!(photometric_error(&b, &b).unwrap().mean(), 0.0);
    }

    #[test]
    fn rejects_mismatches() {
        let a = RasterImage::black(2, 2, ColorSpace::Raw);
        assert!(photometric_error(&a, &RasterImage::black(2, 3, ColorSpace::Raw)).is_err());
        assert!(photometric_error(&a, &RasterImage::black(2, 2, ColorSpace::Normalized)).is_err());
    }

    #[test]
    fn masked_mean() {
        let m = ErrorMap {
            width: 3,
            height: 1,
            data: vec![1.0, 2.0, 6.0],
        };
        assert_eq!(m.masked_mean(&[true, false, true]), Some(3.5));
        assert_eq!(m.masked_mean(&[false; 3]), None);
    }
}
