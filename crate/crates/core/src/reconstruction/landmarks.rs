use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face_model::{apply_rigid_pose, FaceBasis, FaceParameters};
use crate::image_formation::{eye_layouts, CameraIntrinsics};

pub const LANDMARK_COUNT: usize = 66;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    /// Model vertex this detection corresponds to.
    pub vertex: u32,
    pub confidence: f64,
}

/// Sparse 2D detections for one frame plus the iris centers used for gaze.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub landmarks: Vec<Landmark>,
    pub iris_left: [f64; 2],
    pub iris_right: [f64; 2],
}

impl LandmarkSet {
    pub fn validate(&self, basis: &FaceBasis) -> Result<()> {
        if self.landmarks.len() != LANDMARK_COUNT {
            return Err(Error::length("landmarks", LANDMARK_COUNT, self.landmarks.len()));
        }
        for l in &self.landmarks {
            if l.vertex as usize >= basis.vertex_count {
                return Err(Error::InvalidArgument(format!(
                    "landmark vertex {} out of range",
                    l.vertex
                )));
            }
            if !(0.0..=1.0).contains(&l.confidence) {
                return Err(Error::OutOfRange {
                    value: l.confidence,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
            if !l.x.is_finite() || !l.y.is_finite() {
                return Err(Error::InvalidArgument("non-finite landmark position".into()));
            }
        }
        Ok(())
    }

    pub fn iris(&self, eye: usize) -> Vector2<f64> {
        let p = if eye == 0 { self.iris_left } else { self.iris_right };
        Vector2::new(p[0], p[1])
    }

    /// Exact detections of a known parameter set: projected landmark
    /// vertices at full confidence and the rendered pupil centers.
    pub fn from_params(basis: &FaceBasis, params: &FaceParameters, cam: &CameraIntrinsics) -> Result<Self> {
        let geometry = basis.evaluate_geometry(&params.alpha, &params.delta)?;
        let points = apply_rigid_pose(geometry.as_slice(), &params.rotation, &params.translation)?;
        let landmarks = basis
            .landmark_vertices
            .iter()
            .map(|&v| {
                let p = cam.project(&points[v as usize])?;
                Ok(Landmark {
                    x: p.x,
                    y: p.y,
                    vertex: v,
                    confidence: 1.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let eyes = eye_layouts(basis, params, cam);
        let pupil = |e: usize| {
            let p = eyes[e].pupil_center(cam, params.gaze[2 * e], params.gaze[2 * e + 1]);
            [p.x, p.y]
        };
        Ok(LandmarkSet {
            landmarks,
            iris_left: pupil(0),
            iris_right: pupil(1),
        })
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Gaze angles implied by the iris detections under the given pose and
/// identity, mapped linearly from the iris offset within each eye.
pub fn gaze_from_iris(
    basis: &FaceBasis,
    params: &FaceParameters,
    landmarks: &LandmarkSet,
    cam: &CameraIntrinsics,
) -> [f64; 4] {
    let eyes = eye_layouts(basis, params, cam);
    let mut gaze = [0.0; 4];
    for (e, layout) in eyes.iter().enumerate() {
        if layout.radius_px <= 0.0 {
            continue;
        }
        let (yaw, pitch) = layout.gaze_from_pupil(landmarks.iris(e));
        gaze[2 * e] = yaw;
        gaze[2 * e + 1] = pitch;
    }
    gaze
}
