use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera shared by every frame of a scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_length_px: f64,
    pub principal_point: [f64; 2],
    /// `[width, height]`
    pub image_size: [usize; 2],
}

impl CameraIntrinsics {
    pub fn new(focal_length_px: f64, principal_point: [f64; 2], image_size: [usize; 2]) -> Result<Self> {
        let cam = CameraIntrinsics {
            focal_length_px,
            principal_point,
            image_size,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Focal length 1.2 x the larger side, principal point at the center.
    pub fn default_for(width: usize, height: usize) -> Self {
        CameraIntrinsics {
            focal_length_px: 1.2 * width.max(height) as f64,
            principal_point: [width as f64 / 2.0, height as f64 / 2.0],
            image_size: [width, height],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.image_size;
        if !(self.focal_length_px > 0.0) {
            return Err(Error::InvalidArgument("focal length must be positive".into()));
        }
        if w == 0 || h == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        let [cx, cy] = self.principal_point;
        if !(0.0..=w as f64).contains(&cx) || !(0.0..=h as f64).contains(&cy) {
            return Err(Error::InvalidArgument("principal point outside image".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.image_size[0]
    }

    pub fn height(&self) -> usize {
        self.image_size[1]
    }

    pub fn diagonal(&self) -> f64 {
        (self.width() as f64).hypot(self.height() as f64)
    }

    /// Perspective projection of a camera-space point.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera(p.z));
        }
        Ok(self.project_unchecked(p))
    }

    #[inline]
    pub(crate) fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let f = self.focal_length_px;
        Vector2::new(
            f * p.x / p.z + self.principal_point[0],
            f * p.y / p.z + self.principal_point[1],
        )
    }

    /// Derivative of the projection with respect to the camera-space point.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> [[f64; 3]; 2] {
        let f = self.focal_length_px;
        let iz = 1.0 / p.z;
        [[f * iz, 0.0, -f * p.x * iz * iz], [0.0, f * iz, -f * p.y * iz * iz]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optical_axis_and_offset() {
        let cam = CameraIntrinsics::new(500.0, [128.0, 128.0], [256, 256]).unwrap();
        assert_eq!(
            cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap(),
            Vector2::new(128.0, 128.0)
        );
        let p = cam.project(&Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert!((p - Vector2::new(178.0, 128.0)).norm() < 1e-12);
    }

    #[test]
    fn matches_homogeneous_oracle() {
        let cam = CameraIntrinsics::new(500.0, [128.0, 120.0], [256, 240]).unwrap();
        let p = Vector3::new(0.1, 0.2, 2.0);
        // K * p followed by dehomogenization
        let k = nalgebra::Matrix3::new(500.0, 0.0, 128.0, 0.0, 500.0, 120.0, 0.0, 0.0, 1.0);
        let h = k * p;
        let want = Vector2::new(h.x / h.z, h.y / h.z);
        assert!((cam.project(&p).unwrap() - want).norm() < 1e-12);
    }

    #[test]
    fn rejects_points_behind() {
        let cam = CameraIntrinsics::default_for(64, 64);
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, 0.0)),
            Err(Error::BehindCamera(_))
        ));
        assert!(cam.project(&Vector3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn validation() {
        assert!(CameraIntrinsics::new(-1.0, [1.0, 1.0], [2, 2]).is_err());
        assert!(CameraIntrinsics::new(1.0, [5.0, 1.0], [2, 2]).is_err());
        assert!(CameraIntrinsics::default_for(64, 48).validate().is_ok());
    }
}
