use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::landmarks::LandmarkSet;
use crate::error::{Error, Result};
use crate::face_model::{apply_rigid_pose, FaceBasis, FaceParameters};
use crate::image_formation::{render_fragments, CameraIntrinsics, ColorSpace, PosedMesh, RasterImage};

/// Weights of the photometric, landmark and regularization terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub w_photo: f64,
    pub w_land: f64,
    pub w_reg: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            w_photo: 1.0,
            w_land: 1e5,
            w_reg: 0.05,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_photo, self.w_land, self.w_reg];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("energy weights must be non-negative".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidArgument("energy weights are all zero".into()));
        }
        Ok(())
    }
}

/// Observed color in `[0, 1]` regardless of the frame's color space.
#[inline]
pub(crate) fn unit_color(frame: &RasterImage, v: [f64; 3]) -> [f64; 3] {
    match frame.space {
        ColorSpace::Raw => v.map(|c| c / 255.0),
        ColorSpace::Normalized => v.map(|c| (c + 1.0) * 0.5),
    }
}

/// Per-pixel RGB residuals over the foreground of the synthetic render.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotoResiduals {
    /// Three entries per foreground pixel, in `[0, 1]` color units.
    pub values: Vec<f64>,
    pub pixels: Vec<(usize, usize)>,
}

impl PhotoResiduals {
    /// Sum of per-pixel l1 norms.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|r| r.abs()).sum()
    }
}

fn check_frame(frame: &RasterImage, cam: &CameraIntrinsics) -> Result<()> {
    if frame.width != cam.width() || frame.height != cam.height() {
        return Err(Error::ImageSizeMismatch(
            frame.width,
            frame.height,
            cam.width(),
            cam.height(),
        ));
    }
    Ok(())
}

/// Synthesized minus observed color at every pixel the head covers.
pub fn residuals_photo(
    frame: &RasterImage,
    basis: &FaceBasis,
    params: &FaceParameters,
    cam: &CameraIntrinsics,
) -> Result<PhotoResiduals> {
    check_frame(frame, cam)?;
    let posed = PosedMesh::new(basis, params)?;
    let buf = render_fragments(basis, &posed, cam);
    let mut values = Vec::with_capacity(3 * buf.covered());
    let mut pixels = Vec::with_capacity(buf.covered());
    for (x, y, f) in buf.iter_covered() {
        let synth = posed.shade(basis.triangles[f.triangle as usize], f.bary, &params.sh);
        let obs = unit_color(frame, frame.pixel(x, y));
        for c in 0..3 {
            values.push(synth[c] - obs[c]);
        }
        pixels.push((x, y));
    }
    if pixels.is_empty() {
        return Err(Error::EmptyForeground);
    }
    Ok(PhotoResiduals { values, pixels })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkResiduals {
    /// Two entries per landmark.
    pub values: Vec<f64>,
    /// Landmarks whose vertex fell behind the camera.
    pub dropped: usize,
}

impl LandmarkResiduals {
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|r| r * r).sum()
    }
}

/// Confidence-weighted reprojection error in units of the image diagonal.
pub fn residuals_landmark(
    landmarks: &LandmarkSet,
    basis: &FaceBasis,
    params: &FaceParameters,
    cam: &CameraIntrinsics,
) -> Result<LandmarkResiduals> {
    landmarks.validate(basis)?;
    let geometry = basis.evaluate_geometry(&params.alpha, &params.delta)?;
    let r = params.rotation.to_rotation_matrix();
    let diag = cam.diagonal();
    let mut values = Vec::with_capacity(2 * landmarks.landmarks.len());
    let mut dropped = 0;
    for l in &landmarks.landmarks {
        let i = 3 * l.vertex as usize;
        let v = Vector3::new(geometry[i], geometry[i + 1], geometry[i + 2]);
        let p = r * v + params.translation;
        match cam.project(&p) {
            Ok(s) => {
                values.push(l.confidence * (s.x - l.x) / diag);
                values.push(l.confidence * (s.y - l.y) / diag);
            }
            Err(_) => {
                dropped += 1;
                values.extend([0.0, 0.0]);
            }
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} landmark(s) behind the camera were dropped");
    }
    Ok(LandmarkResiduals { values, dropped })
}

/// `c_k / sigma_k` for every identity, reflectance and expression coefficient.
pub fn residual_reg(params: &FaceParameters, basis: &FaceBasis) -> Result<Vec<f64>> {
    let d = basis.dims();
    if params.dims() != d {
        return Err(Error::InvalidArgument(
            "coefficient lengths do not match the basis".into(),
        ));
    }
    let mut out = Vec::with_capacity(d.alpha + d.beta + d.delta);
    for (c, s) in [
        (&params.alpha, &basis.geometry_stddevs),
        (&params.beta, &basis.reflectance_stddevs),
        (&params.delta, &basis.expression_stddevs),
    ] {
        out.extend(c.iter().zip(s.iter()).map(|(c, s)| c / s));
    }
    Ok(out)
}

/// The three energy terms and their weighted sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub photo: f64,
    pub land: f64,
    pub reg: f64,
    pub total: f64,
}

impl EnergyTerms {
    pub fn combine(photo: f64, land: f64, reg: f64, w: &EnergyWeights) -> Self {
        EnergyTerms {
            photo,
            land,
            reg,
            total: w.w_photo * photo + w.w_land * land + w.w_reg * reg,
        }
    }
}

pub fn total_energy(
    frame: &RasterImage,
    landmarks: &LandmarkSet,
    basis: &FaceBasis,
    params: &FaceParameters,
    weights: &EnergyWeights,
    cam: &CameraIntrinsics,
) -> Result<EnergyTerms> {
    weights.validate()?;
    let photo = residuals_photo(frame, basis, params, cam)?.energy();
    let land = residuals_landmark(landmarks, basis, params, cam)?.energy();
    let reg: f64 = residual_reg(params, basis)?.iter().map(|r| r * r).sum();
    Ok(EnergyTerms::combine(photo, land, reg, weights))
}

/// Posed landmark vertices, used by the analytic landmark Jacobian.
pub(crate) fn landmark_points(
    landmarks: &LandmarkSet,
    geometry: &[f64],
    params: &FaceParameters,
) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
    let flat: Vec<f64> = landmarks
        .landmarks
        .iter()
        .flat_map(|l| {
            let i = 3 * l.vertex as usize;
            [geometry[i], geometry[i + 1], geometry[i + 2]]
        })
        .collect();
    let posed = apply_rigid_pose(&flat, &params.rotation, &params.translation)?;
    let r = params.rotation.to_rotation_matrix();
    Ok(posed
        .into_iter()
        .enumerate()
        .map(|(k, p)| (p, r * Vector3::new(flat[3 * k], flat[3 * k + 1], flat[3 * k + 2])))
        .collect())
}
