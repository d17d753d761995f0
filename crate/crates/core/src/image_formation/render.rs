use nalgebra::{DVector, Vector2, Vector3};

use super::camera::CameraIntrinsics;
use super::image::{ColorSpace, RasterImage};
use super::raster::{rasterize_mesh, Fragment, FragmentBuffer};
use super::sh::irradiance;
use crate::error::{Error, Result};
use crate::face_model::{apply_rigid_pose, FaceBasis, FaceParameters, GAZE_LIMIT};

/// Pupil disk radius relative to the projected eye radius.
pub const PUPIL_SCALE: f64 = 0.3;
pub const SCLERA_COLOR: [f64; 3] = [255.0, 255.0, 255.0];
pub const PUPIL_COLOR: [f64; 3] = [0.0, 0.0, 255.0];
const SCLERA_SEGMENTS: usize = 32;

/// Area-weighted vertex normals. Zero-area triangles contribute nothing; a
/// vertex without any contribution is an error.
pub fn compute_vertex_normals(vertices: &[Vector3<f64>], triangles: &[[u32; 3]]) -> Result<Vec<Vector3<f64>>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for t in triangles {
        let [a, b, c] = t.map(|i| vertices[i as usize]);
        // |cross| is twice the triangle area
        let n = (b - a).cross(&(c - a));
        if n.norm_squared() == 0.0 {
            continue;
        }
        for &i in t {
            acc[i as usize] += n;
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len == 0.0 || !len.is_finite() {
                Err(Error::DegenerateNormal(i))
            } else {
                Ok(n / len)
            }
        })
        .collect()
}

/// Evaluated geometry in camera space with normals and raw albedo.
#[derive(Clone, Debug)]
pub struct PosedMesh {
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub albedo: DVector<f64>,
}

impl PosedMesh {
    pub fn new(basis: &FaceBasis, params: &FaceParameters) -> Result<Self> {
        params.validate(basis)?;
        let geometry = basis.evaluate_geometry(&params.alpha, &params.delta)?;
        let points = apply_rigid_pose(geometry.as_slice(), &params.rotation, &params.translation)?;
        let normals = compute_vertex_normals(&points, &basis.triangles)?;
        let albedo = basis.evaluate_reflectance(&params.beta)?.raw;
        Ok(PosedMesh {
            points,
            normals,
            albedo,
        })
    }

    /// Surface point at perspective-correct barycentrics of a triangle.
    #[inline]
    pub fn surface_point(&self, tri: [u32; 3], bary: [f64; 3]) -> Vector3<f64> {
        (0..3).map(|k| self.points[tri[k] as usize] * bary[k]).sum()
    }

    /// Shaded color in `[0, 1]` for a surface point.
    #[inline]
    pub fn shade(&self, tri: [u32; 3], bary: [f64; 3], sh: &[f64; 27]) -> [f64; 3] {
        let mut n = Vector3::zeros();
        let mut r = [0.0; 3];
        for k in 0..3 {
            let i = tri[k] as usize;
            n += self.normals[i] * bary[k];
            for (c, rc) in r.iter_mut().enumerate() {
                *rc += self.albedo[3 * i + c] * bary[k];
            }
        }
        let len = n.norm();
        let n = if len > 0.0 { n / len } else { n };
        let e = irradiance(&n, sh);
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = (r[c].clamp(0.0, 1.0) * e[c]).clamp(0.0, 1.0);
        }
        out
    }
}

/// Rasterized visibility of the posed head.
pub fn render_fragments(basis: &FaceBasis, posed: &PosedMesh, cam: &CameraIntrinsics) -> FragmentBuffer {
    rasterize_mesh(&posed.points, &basis.triangles, cam)
}

fn shade_buffer(basis: &FaceBasis, posed: &PosedMesh, buf: &FragmentBuffer, sh: &[f64; 27]) -> RasterImage {
    let mut img = RasterImage::black(buf.width, buf.height, ColorSpace::Raw);
    for (x, y, f) in buf.iter_covered() {
        let c = posed.shade(basis.triangles[f.triangle as usize], f.bary, sh);
        img.set_pixel(x, y, [c[0] * 255.0, c[1] * 255.0, c[2] * 255.0]);
    }
    img
}

/// Shaded head under the frame illumination on a black background.
pub fn rasterize_color(basis: &FaceBasis, params: &FaceParameters, cam: &CameraIntrinsics) -> Result<RasterImage> {
    let posed = PosedMesh::new(basis, params)?;
    let buf = render_fragments(basis, &posed, cam);
    Ok(shade_buffer(basis, &posed, &buf, &params.sh))
}

/// Per-vertex correspondence code in `[0, 255]^3`: the canonical (average
/// shape) position affinely mapped into the unit cube.
pub fn correspondence_codes(basis: &FaceBasis) -> Vec<[f64; 3]> {
    let (lo, hi) = basis.canonical_bounds();
    (0..basis.vertex_count)
        .map(|i| {
            let p = basis.canonical_vertex(i);
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = 255.0 * (p[k] - lo[k]) / (hi[k] - lo[k]);
            }
            c
        })
        .collect()
}

fn interpolate_code(codes: &[[f64; 3]], tri: [u32; 3], f: &Fragment) -> [f64; 3] {
    let mut out = [0.0; 3];
    for k in 0..3 {
        let c = codes[tri[k] as usize];
        for ch in 0..3 {
            out[ch] += c[ch] * f.bary[k];
        }
    }
    out.map(|v| v.clamp(0.0, 255.0))
}

/// Head textured with the pose-invariant correspondence code.
pub fn rasterize_correspondence(
    basis: &FaceBasis,
    params: &FaceParameters,
    cam: &CameraIntrinsics,
) -> Result<RasterImage> {
    let posed = PosedMesh::new(basis, params)?;
    let buf = render_fragments(basis, &posed, cam);
    Ok(correspondence_from(basis, &buf))
}

fn correspondence_from(basis: &FaceBasis, buf: &FragmentBuffer) -> RasterImage {
    let codes = correspondence_codes(basis);
    let mut img = RasterImage::black(buf.width, buf.height, ColorSpace::Raw);
    for (x, y, f) in buf.iter_covered() {
        img.set_pixel(x, y, interpolate_code(&codes, basis.triangles[f.triangle as usize], f));
    }
    img
}

/// Socket center of an eye for the given identity, ignoring expression.
pub fn eye_socket_center(basis: &FaceBasis, eye: usize, alpha: &[f64]) -> Vector3<f64> {
    let ann = &basis.eyes[eye];
    let mut c = Vector3::zeros();
    for &vi in &ann.vertices {
        for k in 0..3 {
            let row = 3 * vi as usize + k;
            let mut v = basis.average_geometry[row];
            for (j, a) in alpha.iter().enumerate() {
                v += a * basis.geometry_basis[(row, j)];
            }
            c[k] += v;
        }
    }
    c / ann.vertices.len() as f64
}

/// Projected layout of one eye.
#[derive(Clone, Debug)]
pub struct EyeLayout {
    /// Whether the socket faces the camera.
    pub visible: bool,
    pub center_px: Vector2<f64>,
    pub radius_px: f64,
    /// Image displacement for a unit normalized yaw / pitch offset.
    pub yaw_axis_px: Vector2<f64>,
    pub pitch_axis_px: Vector2<f64>,
    pub sclera: Vec<Vector2<f64>>,
    pub center_cam: Vector3<f64>,
    pub u_cam: Vector3<f64>,
    pub v_cam: Vector3<f64>,
    pub radius: f64,
}

impl EyeLayout {
    /// Pupil center for gaze angles, clamped to the sclera disk.
    pub fn pupil_center(&self, cam: &CameraIntrinsics, yaw: f64, pitch: f64) -> Vector2<f64> {
        let mut o = Vector2::new(yaw / GAZE_LIMIT, pitch / GAZE_LIMIT);
        let n = o.norm();
        if n > 1.0 {
            o /= n;
        }
        let p = self.center_cam + (self.u_cam * o.x + self.v_cam * o.y) * self.radius;
        cam.project_unchecked(&p)
    }

    /// Inverse of [`EyeLayout::pupil_center`] to first order.
    pub fn gaze_from_pupil(&self, pupil: Vector2<f64>) -> (f64, f64) {
        let d = pupil - self.center_px;
        let m = nalgebra::Matrix2::from_columns(&[self.yaw_axis_px, self.pitch_axis_px]);
        let o = m.try_inverse().map(|inv| inv * d).unwrap_or_else(Vector2::zeros);
        (
            (o.x * GAZE_LIMIT).clamp(-GAZE_LIMIT, GAZE_LIMIT),
            (o.y * GAZE_LIMIT).clamp(-GAZE_LIMIT, GAZE_LIMIT),
        )
    }
}

pub fn eye_layouts(basis: &FaceBasis, params: &FaceParameters, cam: &CameraIntrinsics) -> [EyeLayout; 2] {
    let r = params.rotation;
    let normal = r * Vector3::new(0.0, 0.0, -1.0);
    let u = r * Vector3::x();
    let v = r * Vector3::y();
    let make = |eye: usize| {
        let radius = basis.eyes[eye].radius;
        let center = r * eye_socket_center(basis, eye, &params.alpha) + params.translation;
        let in_front = center.z > radius;
        let visible = in_front && normal.dot(&center) < 0.0;
        if !in_front {
            return EyeLayout {
                visible: false,
                center_px: Vector2::zeros(),
                radius_px: 0.0,
                yaw_axis_px: Vector2::zeros(),
                pitch_axis_px: Vector2::zeros(),
                sclera: Vec::new(),
                center_cam: center,
                u_cam: u,
                v_cam: v,
                radius,
            };
        }
        let center_px = cam.project_unchecked(&center);
        let sclera = (0..SCLERA_SEGMENTS)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / SCLERA_SEGMENTS as f64;
                cam.project_unchecked(&(center + (u * a.cos() + v * a.sin()) * radius))
            })
            .collect();
        EyeLayout {
            visible,
            center_px,
            radius_px: cam.focal_length_px * radius / center.z,
            yaw_axis_px: cam.project_unchecked(&(center + u * radius)) - center_px,
            pitch_axis_px: cam.project_unchecked(&(center + v * radius)) - center_px,
            sclera,
            center_cam: center,
            u_cam: u,
            v_cam: v,
            radius,
        }
    };
    [make(0), make(1)]
}

fn point_in_polygon(p: Vector2<f64>, poly: &[Vector2<f64>]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Sclera regions in white with blue pupils; eyelid closure removes the
/// upper part of both.
pub fn rasterize_gaze(basis: &FaceBasis, params: &FaceParameters, cam: &CameraIntrinsics) -> Result<RasterImage> {
    params.validate(basis)?;
    let (w, h) = (cam.width(), cam.height());
    let mut img = RasterImage::black(w, h, ColorSpace::Raw);
    let closure = basis.eye_closure(&params.delta);
    for (eye, layout) in eye_layouts(basis, params, cam).iter().enumerate() {
        if !layout.visible {
            continue;
        }
        let top = layout.sclera.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let bottom = layout.sclera.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let lid = top + closure * (bottom - top);
        let pupil = layout.pupil_center(cam, params.gaze[2 * eye], params.gaze[2 * eye + 1]);
        let pupil_r = PUPIL_SCALE * layout.radius_px;

        let xs = layout.sclera.iter().map(|p| p.x);
        let min_x = xs.clone().fold(f64::INFINITY, f64::min).min(pupil.x - pupil_r);
        let max_x = xs.fold(f64::NEG_INFINITY, f64::max).max(pupil.x + pupil_r);
        let min_y = top.min(pupil.y - pupil_r);
        let max_y = bottom.max(pupil.y + pupil_r);
        let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
        let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
        let x1 = ((max_x - 0.5).floor() as i64).min(w as i64 - 1);
        let y1 = ((max_y - 0.5).floor() as i64).min(h as i64 - 1);
        if x1 < x0 as i64 || y1 < y0 as i64 {
            continue;
        }
        for py in y0..=y1 as usize {
            let fy = py as f64 + 0.5;
            if fy <= lid {
                continue;
            }
            for px in x0..=x1 as usize {
                let p = Vector2::new(px as f64 + 0.5, fy);
                if (p - pupil).norm() <= pupil_r {
                    img.set_pixel(px, py, PUPIL_COLOR);
                } else if point_in_polygon(p, &layout.sclera) {
                    img.set_pixel(px, py, SCLERA_COLOR);
                }
            }
        }
    }
    Ok(img)
}

/// The three conditioning images of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningFrame {
    pub color: RasterImage,
    pub correspondence: RasterImage,
    pub gaze: RasterImage,
}

impl ConditioningFrame {
    pub fn new(color: RasterImage, correspondence: RasterImage, gaze: RasterImage) -> Result<Self> {
        color.same_size(&correspondence)?;
        color.same_size(&gaze)?;
        Ok(ConditioningFrame {
            color,
            correspondence,
            gaze,
        })
    }

    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }

    pub fn images(&self) -> [&RasterImage; 3] {
        [&self.color, &self.correspondence, &self.gaze]
    }
}

/// Renders all three conditioning images with a single visibility pass.
pub fn render_conditioning(
    basis: &FaceBasis,
    params: &FaceParameters,
    cam: &CameraIntrinsics,
) -> Result<ConditioningFrame> {
    let posed = PosedMesh::new(basis, params)?;
    let buf = render_fragments(basis, &posed, cam);
    let color = shade_buffer(basis, &posed, &buf, &params.sh);
    let correspondence = correspondence_from(basis, &buf);
    let gaze = rasterize_gaze(basis, params, cam)?;
    ConditioningFrame::new(color, correspondence, gaze)
}
