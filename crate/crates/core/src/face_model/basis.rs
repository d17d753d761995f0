use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mesh::{self, EYE_RADIUS, EYE_SOCKET_XY};
use crate::error::{Error, Result};

/// Expression dimension that opens the jaw.
pub const JAW_OPEN: usize = 0;
/// Expression dimension that closes both eyelids.
pub const EYE_CLOSURE: usize = 1;

/// Per-column decay of the procedural singular values.
pub const SINGULAR_DECAY: f64 = 0.95;
pub const GEOMETRY_SIGMA0: f64 = 0.8;
pub const REFLECTANCE_SIGMA0: f64 = 0.7;
pub const EXPRESSION_SIGMA0: f64 = 1.0;

/// Coefficient counts of the three linear models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    pub alpha: usize,
    pub beta: usize,
    pub delta: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            alpha: 80,
            beta: 80,
            delta: 64,
        }
    }
}

impl ModelDims {
    /// Pose (6) + identity + reflectance + expression + gaze (4) + illumination (27).
    pub fn parameter_count(&self) -> usize {
        6 + self.alpha + self.beta + self.delta + 4 + 27
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EyeAnnotation {
    /// Vertices of the eye region.
    pub vertices: Vec<u32>,
    /// Socket center in canonical model space (mean of the region vertices).
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// Average shape and reflectance plus the three linear bases.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceBasis {
    pub seed: u64,
    pub vertex_count: usize,
    pub average_geometry: DVector<f64>,
    pub average_reflectance: DVector<f64>,
    /// 3N x N_alpha, column-major.
    pub geometry_basis: DMatrix<f64>,
    /// 3N x N_beta.
    pub reflectance_basis: DMatrix<f64>,
    /// 3N x N_delta.
    pub expression_basis: DMatrix<f64>,
    pub geometry_stddevs: Vec<f64>,
    pub reflectance_stddevs: Vec<f64>,
    pub expression_stddevs: Vec<f64>,
    pub triangles: Vec<[u32; 3]>,
    pub texture_coordinates: Vec<[f64; 2]>,
    /// Index 0 is the eye on the image-left side (negative x), index 1 the other.
    pub eyes: [EyeAnnotation; 2],
    /// Model vertices tracked by the 66 sparse landmarks.
    pub landmark_vertices: Vec<u32>,
}

/// Per-vertex albedo, with the affine value kept for differentiation.
#[derive(Clone, Debug, PartialEq)]
pub struct Reflectance {
    pub raw: DVector<f64>,
}

impl Reflectance {
    pub fn clamped(&self) -> DVector<f64> {
        self.raw.map(|v| v.clamp(0.0, 1.0))
    }
}

fn singular_values(sigma0: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| sigma0 * SINGULAR_DECAY.powi(k as i32)).collect()
}

/// Gram-Schmidt against the already accepted columns, run twice.
fn orthonormalize_into(columns: &mut Vec<DVector<f64>>, mut v: DVector<f64>) -> bool {
    let norm0 = v.norm();
    for _ in 0..2 {
        for c in columns.iter() {
            let d = c.dot(&v);
            v.axpy(-d, c, 1.0);
        }
    }
    let n = v.norm();
    if n < 1e-6 * norm0 || n == 0.0 {
        return false;
    }
    columns.push(v / n);
    true
}

struct FieldTerm {
    freq: Vector3<f64>,
    phase: f64,
    amp: Vector3<f64>,
}

fn random_field(rng: &mut ChaCha8Rng, terms: usize) -> Vec<FieldTerm> {
    (0..terms)
        .map(|_| {
            let dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let dir = if dir.norm() < 1e-3 {
                Vector3::x()
            } else {
                dir.normalize()
            };
            FieldTerm {
                freq: dir * rng.random_range(1.5..5.0),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amp: Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
            }
        })
        .collect()
}

fn eval_field(terms: &[FieldTerm], p: &Vector3<f64>) -> Vector3<f64> {
    terms.iter().map(|t| t.amp * (t.freq.dot(p) + t.phase).sin()).sum()
}

fn front_weight(p: &Vector3<f64>) -> f64 {
    let z = (-p.z / 0.85).clamp(0.0, 1.0);
    let y = ((p.y + 0.6) / 0.3).clamp(0.0, 1.0);
    z * z * y
}

fn stack(cols: &[DVector<f64>], sigmas: &[f64], rows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (k, c) in cols.iter().enumerate() {
        m.set_column(k, &(c * sigmas[k]));
    }
    m
}

/// Infinitesimal translations, rotations and uniform scaling of the mesh,
/// each weighted by `mask`.
fn similarity_fields(positions: &[Vector3<f64>], mask: &impl Fn(&Vector3<f64>) -> f64) -> Vec<DVector<f64>> {
    let rows = positions.len() * 3;
    let center = positions.iter().sum::<Vector3<f64>>() / positions.len() as f64;
    let mut fields = vec![DVector::zeros(rows); 7];
    for (i, p) in positions.iter().enumerate() {
        let m = mask(p);
        let q = p - center;
        let mut motions = [Vector3::zeros(); 7];
        for k in 0..3 {
            motions[k] = Vector3::ith(k, 1.0);
            motions[3 + k] = Vector3::ith(k, 1.0).cross(&q);
        }
        motions[6] = q;
        for (f, d) in fields.iter_mut().zip(motions) {
            for k in 0..3 {
                f[3 * i + k] = m * d[k];
            }
        }
    }
    fields
}

/// Fill `count` orthonormal smooth columns, starting from `seeded`. With
/// `exclude_similarity` the columns are also orthogonal to the masked
/// similarity motions, as in a model built from aligned scans.
fn smooth_columns(
    rng: &mut ChaCha8Rng,
    positions: &[Vector3<f64>],
    mut seeded: Vec<DVector<f64>>,
    count: usize,
    mask: impl Fn(&Vector3<f64>) -> f64,
    exclude_similarity: bool,
) -> Vec<DVector<f64>> {
    let rows = positions.len() * 3;
    seeded.truncate(count);
    let mut all = Vec::with_capacity(count + 7);
    if exclude_similarity {
        for f in similarity_fields(positions, &mask) {
            orthonormalize_into(&mut all, f);
        }
    }
    let skip = all.len();
    for v in seeded {
        orthonormalize_into(&mut all, v);
    }
    while all.len() < skip + count {
        let field = random_field(rng, 4);
        let mut v = DVector::zeros(rows);
        for (i, p) in positions.iter().enumerate() {
            let d = eval_field(&field, p) * mask(p);
            v[3 * i] = d.x;
            v[3 * i + 1] = d.y;
            v[3 * i + 2] = d.z;
        }
        orthonormalize_into(&mut all, v);
    }
    all.split_off(skip)
}

fn average_albedo(p: &Vector3<f64>, eyes: &[Vector3<f64>; 2]) -> [f64; 3] {
    let skin = [0.78, 0.58, 0.47];
    let mut c = skin;
    let front = front_weight(p);
    // lips
    let lip = (-(p.x / 0.22).powi(2) - ((p.y - 0.45) / 0.07).powi(2)).exp() * front;
    // brows
    let brow = (-((p.x.abs() - 0.28) / 0.14).powi(2) - ((p.y + 0.33) / 0.04).powi(2)).exp() * front;
    // hairline toward the crown and back
    let hair = ((-p.y - 0.55) / 0.25)
        .clamp(0.0, 1.0)
        .max(((p.z - 0.2) / 0.4).clamp(0.0, 1.0));
    let mut eye = 0.0_f64;
    for e in eyes {
        let d2 = (p.x - e.x).powi(2) + (p.y - e.y).powi(2);
        eye = eye.max((-d2 / (EYE_RADIUS * EYE_RADIUS)).exp() * front);
    }
    let blend = |c: &mut [f64; 3], target: [f64; 3], w: f64| {
        for k in 0..3 {
            c[k] = c[k] * (1.0 - w) + target[k] * w;
        }
    };
    blend(&mut c, [0.72, 0.32, 0.32], lip);
    blend(&mut c, [0.3, 0.2, 0.15], brow);
    blend(&mut c, [0.25, 0.17, 0.12], hair);
    blend(&mut c, [0.92, 0.9, 0.88], eye * 0.8);
    c
}

/// Builds a deterministic procedural face model.
pub fn synthesize_basis(seed: u64, vertex_count: usize, dims: ModelDims) -> Result<FaceBasis> {
    if vertex_count < 64 {
        return Err(Error::TooFewVertices(vertex_count));
    }
    if dims.alpha == 0 || dims.beta == 0 || dims.delta == 0 {
        return Err(Error::InvalidArgument("model dimensions must be positive".into()));
    }
    let rows = 3 * vertex_count;
    if dims.alpha.max(dims.beta).max(dims.delta) + 7 > rows {
        return Err(Error::InvalidArgument(format!(
            "basis dimension exceeds 3N - 7 = {}",
            rows - 7
        )));
    }

    let head = mesh::build_head(vertex_count);
    let positions = &head.positions;

    let mut eyes = Vec::with_capacity(2);
    for [ex, ey] in EYE_SOCKET_XY {
        let verts: Vec<u32> = positions
            .iter()
            .enumerate()
            .filter(|(_, p)| p.z < 0.0 && ((p.x - ex).powi(2) + (p.y - ey).powi(2)).sqrt() < 1.6 * EYE_RADIUS)
            .map(|(i, _)| i as u32)
            .collect();
        if verts.len() < 3 {
            return Err(Error::TooFewVertices(vertex_count));
        }
        let center = verts.iter().map(|&i| positions[i as usize]).sum::<Vector3<f64>>() / verts.len() as f64;
        eyes.push(EyeAnnotation {
            vertices: verts,
            center,
            radius: EYE_RADIUS,
        });
    }
    let eyes: [EyeAnnotation; 2] = [eyes[0].clone(), eyes[1].clone()];

    let landmark_vertices = mesh::landmark_targets()
        .into_iter()
        .map(|[x, y]| {
            positions
                .iter()
                .enumerate()
                .filter(|(_, p)| p.z < 0.0)
                .min_by(|(_, a), (_, b)| {
                    let da = (a.x - x).powi(2) + (a.y - y).powi(2);
                    let db = (b.x - x).powi(2) + (b.y - y).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(i, _)| i as u32)
                .unwrap()
        })
        .collect();

    let mut average_geometry = DVector::zeros(rows);
    let mut average_reflectance = DVector::zeros(rows);
    let eye_centers = [eyes[0].center, eyes[1].center];
    for (i, p) in positions.iter().enumerate() {
        let a = average_albedo(p, &eye_centers);
        for k in 0..3 {
            average_geometry[3 * i + k] = p[k];
            average_reflectance[3 * i + k] = a[k];
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let geo_cols = smooth_columns(&mut rng, positions, Vec::new(), dims.alpha, |_| 1.0, true);

    // Color fields use the amplitude vector as an RGB direction.
    let ref_cols = smooth_columns(&mut rng, positions, Vec::new(), dims.beta, |_| 1.0, false);

    let mut semantic = Vec::new();
    let mut jaw = DVector::zeros(rows);
    for (i, p) in positions.iter().enumerate() {
        let w = front_weight(p) * ((p.y - 0.45) / 0.4).clamp(0.0, 1.0);
        jaw[3 * i + 1] = w;
        jaw[3 * i + 2] = 0.3 * w;
    }
    semantic.push(jaw);
    let mut blink = DVector::zeros(rows);
    for eye in &eyes {
        for &vi in &eye.vertices {
            let p = positions[vi as usize];
            let d2 = (p.x - eye.center.x).powi(2) + (p.y - eye.center.y).powi(2);
            let above = ((eye.center.y + eye.radius - p.y) / (2.0 * eye.radius)).clamp(0.0, 1.0);
            blink[3 * vi as usize + 1] = above * (-d2 / (4.0 * eye.radius * eye.radius)).exp();
        }
    }
    semantic.push(blink);
    let exp_cols = smooth_columns(&mut rng, positions, semantic, dims.delta, front_weight, true);

    let geometry_stddevs = singular_values(GEOMETRY_SIGMA0, dims.alpha);
    let reflectance_stddevs = singular_values(REFLECTANCE_SIGMA0, dims.beta);
    let expression_stddevs = singular_values(EXPRESSION_SIGMA0, dims.delta);

    Ok(FaceBasis {
        seed,
        vertex_count,
        average_geometry,
        average_reflectance,
        geometry_basis: stack(&geo_cols, &geometry_stddevs, rows),
        reflectance_basis: stack(&ref_cols, &reflectance_stddevs, rows),
        expression_basis: stack(&exp_cols, &expression_stddevs, rows),
        geometry_stddevs,
        reflectance_stddevs,
        expression_stddevs,
        triangles: head.triangles,
        texture_coordinates: head.uvs,
        eyes,
        landmark_vertices,
    })
}

impl FaceBasis {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            alpha: self.geometry_basis.ncols(),
            beta: self.reflectance_basis.ncols(),
            delta: self.expression_basis.ncols(),
        }
    }

    /// `a_geo + B_geo * alpha + B_exp * delta`.
    pub fn evaluate_geometry(&self, alpha: &[f64], delta: &[f64]) -> Result<DVector<f64>> {
        let dims = self.dims();
        if alpha.len() != dims.alpha {
            return Err(Error::length("alpha", dims.alpha, alpha.len()));
        }
        if delta.len() != dims.delta {
            return Err(Error::length("delta", dims.delta, delta.len()));
        }
        let mut v = self.average_geometry.clone();
        v.gemv(1.0, &self.geometry_basis, &DVector::from_column_slice(alpha), 1.0);
        v.gemv(1.0, &self.expression_basis, &DVector::from_column_slice(delta), 1.0);
        Ok(v)
    }

    /// `a_ref + B_ref * beta`; clamp with [`Reflectance::clamped`] for display.
    pub fn evaluate_reflectance(&self, beta: &[f64]) -> Result<Reflectance> {
        let dims = self.dims();
        if beta.len() != dims.beta {
            return Err(Error::length("beta", dims.beta, beta.len()));
        }
        let mut r = self.average_reflectance.clone();
        r.gemv(1.0, &self.reflectance_basis, &DVector::from_column_slice(beta), 1.0);
        Ok(Reflectance { raw: r })
    }

    /// Distance between the two canonical eye socket centers.
    pub fn interocular_distance(&self) -> f64 {
        (self.eyes[0].center - self.eyes[1].center).norm()
    }

    /// Axis-aligned bounds of the average geometry, used by the
    /// correspondence encoding.
    pub fn canonical_bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in self.average_geometry.as_slice().chunks_exact(3) {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Canonical position of vertex `i`.
    pub fn canonical_vertex(&self, i: usize) -> Vector3<f64> {
        Vector3::new(
            self.average_geometry[3 * i],
            self.average_geometry[3 * i + 1],
            self.average_geometry[3 * i + 2],
        )
    }

    /// Fraction of eyelid closure in [0, 1]; fully closed at two standard
    /// deviations of the closure dimension.
    pub fn eye_closure(&self, delta: &[f64]) -> f64 {
        if self.expression_stddevs.len() <= EYE_CLOSURE || delta.len() <= EYE_CLOSURE {
            return 0.0;
        }
        (delta[EYE_CLOSURE] / (2.0 * self.expression_stddevs[EYE_CLOSURE])).clamp(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let rows = 3 * self.vertex_count;
        for (what, len) in [
            ("average_geometry", self.average_geometry.len()),
            ("average_reflectance", self.average_reflectance.len()),
            ("geometry_basis rows", self.geometry_basis.nrows()),
            ("reflectance_basis rows", self.reflectance_basis.nrows()),
            ("expression_basis rows", self.expression_basis.nrows()),
        ] {
            if len != rows {
                return Err(Error::length(what, rows, len));
            }
        }
        if self.texture_coordinates.len() != self.vertex_count {
            return Err(Error::length(
                "texture_coordinates",
                self.vertex_count,
                self.texture_coordinates.len(),
            ));
        }
        let n = self.vertex_count as u32;
        if self.triangles.iter().flatten().any(|&i| i >= n)
            || self.landmark_vertices.iter().any(|&i| i >= n)
            || self.eyes.iter().flat_map(|e| &e.vertices).any(|&i| i >= n)
        {
            return Err(Error::Format("vertex index out of range".into()));
        }
        if self
            .texture_coordinates
            .iter()
            .flatten()
            .any(|&t| !(0.0..=1.0).contains(&t))
        {
            return Err(Error::Format("texture coordinate outside [0,1]".into()));
        }
        Ok(())
    }
}

/// Flat `3N` vector to per-vertex points.
pub fn to_points(flat: &[f64]) -> Vec<Vector3<f64>> {
    flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}
