use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::energy::{landmark_points, residual_reg, total_energy, unit_color, EnergyWeights};
use super::landmarks::{gaze_from_iris, LandmarkSet};
use crate::error::{Error, Result};
use crate::face_model::{apply_rigid_pose, FaceBasis, FaceParameters, ModelDims, SH_COEFFS};
use crate::image_formation::raster::NEAR_PLANE;
use crate::image_formation::{compute_vertex_normals, render_fragments, CameraIntrinsics, PosedMesh, RasterImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Pose, identity, reflectance, expression and illumination.
    Full,
    /// Identity and reflectance frozen.
    Tracking,
}

/// Column layout of the solver unknowns for one mode.
///
/// Order: rotation increment (3), translation (3), alpha, beta, delta, sh.
/// Alpha and beta are absent in tracking mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveSet {
    pub mode: FitMode,
    pub dims: ModelDims,
}

impl ActiveSet {
    pub fn new(mode: FitMode, dims: ModelDims) -> Self {
        ActiveSet { mode, dims }
    }

    fn identity_len(&self) -> (usize, usize) {
        match self.mode {
            FitMode::Full => (self.dims.alpha, self.dims.beta),
            FitMode::Tracking => (0, 0),
        }
    }

    pub fn len(&self) -> usize {
        let (a, b) = self.identity_len();
        6 + a + b + self.dims.delta + SH_COEFFS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rotation(&self) -> Range<usize> {
        0..3
    }

    pub fn translation(&self) -> Range<usize> {
        3..6
    }

    pub fn alpha(&self) -> Option<Range<usize>> {
        let (a, _) = self.identity_len();
        (a > 0).then_some(6..6 + a)
    }

    pub fn beta(&self) -> Option<Range<usize>> {
        let (a, b) = self.identity_len();
        (b > 0).then_some(6 + a..6 + a + b)
    }

    pub fn delta(&self) -> Range<usize> {
        let (a, b) = self.identity_len();
        let s = 6 + a + b;
        s..s + self.dims.delta
    }

    pub fn sh(&self) -> Range<usize> {
        let s = self.delta().end;
        s..s + SH_COEFFS
    }

    /// Applies a step: rotation is updated as `exp(w) R`, everything else
    /// additively. Inactive groups are left untouched.
    pub fn apply(&self, params: &FaceParameters, step: &[f64]) -> FaceParameters {
        let mut p = params.clone();
        let w = Vector3::new(step[0], step[1], step[2]);
        p.rotation = UnitQuaternion::from_scaled_axis(w) * p.rotation;
        p.rotation.renormalize();
        for k in 0..3 {
            p.translation[k] += step[3 + k];
        }
        if let Some(r) = self.alpha() {
            p.alpha.iter_mut().zip(&step[r]).for_each(|(c, d)| *c += d);
        }
        if let Some(r) = self.beta() {
            p.beta.iter_mut().zip(&step[r]).for_each(|(c, d)| *c += d);
        }
        p.delta.iter_mut().zip(&step[self.delta()]).for_each(|(c, d)| *c += d);
        p.sh.iter_mut().zip(&step[self.sh()]).for_each(|(c, d)| *c += d);
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iters: usize,
    pub weights: EnergyWeights,
    /// Forward-difference step of the photometric Jacobian.
    pub fd_step: f64,
    /// Floor on |r| in the l1 reweighting.
    pub irls_epsilon: f64,
    /// Relative energy decrease below which the solve stops.
    pub tolerance: f64,
    /// Initial damping relative to the mean diagonal of the normal matrix.
    pub initial_damping: f64,
    /// Times the damping may grow by 10x within one iteration.
    pub max_damping_escalations: usize,
    /// Gaussian blur (pixels) of the image used for photometric derivatives
    /// in the first iteration; multiplied by `blur_decay` every iteration.
    pub jacobian_blur: f64,
    pub blur_decay: f64,
    /// Central instead of forward differences for the photometric block.
    pub central_differences: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 7,
            weights: EnergyWeights::default(),
            fd_step: 1e-4,
            irls_epsilon: 1e-4,
            tolerance: 1e-5,
            initial_damping: 1e-3,
            max_damping_escalations: 10,
            jacobian_blur: 3.0,
            blur_decay: 0.7,
            central_differences: true,
        }
    }
}

/// Surface points sampled from the current render; fixed for one
/// linearization so the photometric residual is smooth in the parameters.
struct PhotoSamples<'a> {
    cam: &'a CameraIntrinsics,
    triangles: Vec<[u32; 3]>,
    barys: Vec<[f64; 3]>,
}

impl<'a> PhotoSamples<'a> {
    fn from_render(basis: &FaceBasis, posed: &PosedMesh, cam: &'a CameraIntrinsics) -> Result<Self> {
        let buf = render_fragments(basis, posed, cam);
        let (triangles, barys): (Vec<_>, Vec<_>) = buf
            .iter_covered()
            .map(|(_, _, f)| (basis.triangles[f.triangle as usize], f.bary))
            .unzip();
        if triangles.is_empty() {
            return Err(Error::EmptyForeground);
        }
        Ok(PhotoSamples { cam, triangles, barys })
    }

    fn len(&self) -> usize {
        self.triangles.len()
    }

    fn residuals(&self, image: &RasterImage, posed: &PosedMesh, sh: &[f64; SH_COEFFS], out: &mut [f64]) {
        for (s, (tri, bary)) in self.triangles.iter().zip(&self.barys).enumerate() {
            let p = posed.surface_point(*tri, *bary);
            let o = &mut out[3 * s..3 * s + 3];
            if p.z <= NEAR_PLANE {
                o.fill(0.0);
                continue;
            }
            let px = self.cam.project_unchecked(&p);
            let obs = unit_color(image, image.sample_bilinear(px.x, px.y));
            let synth = posed.shade(*tri, *bary, sh);
            for c in 0..3 {
                o[c] = synth[c] - obs[c];
            }
        }
    }
}

fn pose_mesh(
    basis: &FaceBasis,
    geometry: &[f64],
    rotation: &UnitQuaternion<f64>,
    translation: &Vector3<f64>,
    albedo: DVector<f64>,
) -> Result<PosedMesh> {
    let points = apply_rigid_pose(geometry, rotation, translation)?;
    let normals = compute_vertex_normals(&points, &basis.triangles)?;
    Ok(PosedMesh {
        points,
        normals,
        albedo,
    })
}

/// Evaluated state with a single solver unknown offset.
struct Perturb<'a> {
    basis: &'a FaceBasis,
    params: &'a FaceParameters,
    active: &'a ActiveSet,
    geometry: &'a DVector<f64>,
    albedo: &'a DVector<f64>,
    posed: &'a PosedMesh,
}

impl Perturb<'_> {
    /// Mesh (None when unchanged) and illumination with unknown `j` moved by `h`.
    fn at(&self, j: usize, h: f64) -> Result<(Option<PosedMesh>, [f64; SH_COEFFS])> {
        let a = self.active;
        let p = self.params;
        let mut sh = p.sh;
        let in_range = |r: &Option<Range<usize>>| r.as_ref().filter(|r| r.contains(&j)).map(|r| j - r.start);
        let mesh = if a.rotation().contains(&j) {
            let rot = UnitQuaternion::from_scaled_axis(Vector3::ith(j, h)) * p.rotation;
            Some(pose_mesh(
                self.basis,
                self.geometry.as_slice(),
                &rot,
                &p.translation,
                self.albedo.clone(),
            )?)
        } else if a.translation().contains(&j) {
            let d = Vector3::ith(j - 3, h);
            Some(PosedMesh {
                points: self.posed.points.iter().map(|q| q + d).collect(),
                normals: self.posed.normals.clone(),
                albedo: self.albedo.clone(),
            })
        } else if let Some(k) = in_range(&a.alpha()) {
            Some(self.reshaped(&self.basis.geometry_basis, k, h)?)
        } else if let Some(k) = in_range(&a.beta()) {
            let mut albedo = self.albedo.clone();
            albedo.axpy(h, &self.basis.reflectance_basis.column(k), 1.0);
            Some(PosedMesh {
                points: self.posed.points.clone(),
                normals: self.posed.normals.clone(),
                albedo,
            })
        } else if let Some(k) = in_range(&Some(a.delta())) {
            Some(self.reshaped(&self.basis.expression_basis, k, h)?)
        } else {
            sh[j - a.sh().start] += h;
            None
        };
        Ok((mesh, sh))
    }

    fn reshaped(&self, mat: &DMatrix<f64>, k: usize, h: f64) -> Result<PosedMesh> {
        let mut g = self.geometry.clone();
        g.axpy(h, &mat.column(k), 1.0);
        pose_mesh(
            self.basis,
            g.as_slice(),
            &self.params.rotation,
            &self.params.translation,
            self.albedo.clone(),
        )
    }
}

/// Residuals, Jacobian and IRLS weights of one linearization.
#[derive(Clone, Debug)]
pub struct SolverWorkspace {
    pub active: ActiveSet,
    /// Stacked residuals: photometric, landmark, regularizer.
    pub residuals: DVector<f64>,
    /// Rows match `residuals`, columns match `active`.
    pub jacobian: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub photo_rows: usize,
    pub landmark_rows: usize,
}

impl SolverWorkspace {
    pub fn assemble(
        frame: &RasterImage,
        landmarks: &LandmarkSet,
        basis: &FaceBasis,
        params: &FaceParameters,
        active: ActiveSet,
        cam: &CameraIntrinsics,
        config: &FitConfig,
        blur: f64,
    ) -> Result<Self> {
        let w = &config.weights;
        let geometry = basis.evaluate_geometry(&params.alpha, &params.delta)?;
        let albedo = basis.evaluate_reflectance(&params.beta)?.raw;
        let posed = pose_mesh(
            basis,
            geometry.as_slice(),
            &params.rotation,
            &params.translation,
            albedo.clone(),
        )?;

        let samples = PhotoSamples::from_render(basis, &posed, cam)?;
        let photo_rows = 3 * samples.len();
        let landmark_rows = 2 * landmarks.landmarks.len();
        let reg_cols = reg_columns(&active);
        let rows = photo_rows + landmark_rows + reg_cols.len();
        let cols = active.len();

        let mut residuals = DVector::zeros(rows);
        let mut jacobian = DMatrix::zeros(rows, cols);
        let mut weights = DVector::zeros(rows);

        // photometric block, forward differences
        let mut base = vec![0.0; photo_rows];
        samples.residuals(frame, &posed, &params.sh, &mut base);
        let smooth = frame.gaussian_blur(blur);
        let f0 = base.clone();
        samples.residuals(&smooth, &posed, &params.sh, &mut base);
        for (i, r) in f0.iter().enumerate() {
            residuals[i] = *r;
            // |r| <= r^2 / (2|r0|) + |r0| / 2, tight at r = r0
            weights[i] = w.w_photo / (2.0 * r.abs().max(config.irls_epsilon));
        }
        let h = config.fd_step;
        let ctx = Perturb {
            basis,
            params,
            active: &active,
            geometry: &geometry,
            albedo: &albedo,
            posed: &posed,
        };
        let mut plus = vec![0.0; photo_rows];
        let mut minus = vec![0.0; photo_rows];
        for j in 0..cols {
            let (m, sh) = ctx.at(j, h)?;
            samples.residuals(&smooth, m.as_ref().unwrap_or(&posed), &sh, &mut plus);
            if config.central_differences {
                let (m, sh) = ctx.at(j, -h)?;
                samples.residuals(&smooth, m.as_ref().unwrap_or(&posed), &sh, &mut minus);
                for i in 0..photo_rows {
                    jacobian[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
                }
            } else {
                for i in 0..photo_rows {
                    jacobian[(i, j)] = (plus[i] - base[i]) / h;
                }
            }
        }

        // landmark block, analytic
        let shape_groups = [
            (active.alpha(), &basis.geometry_basis),
            (Some(active.delta()), &basis.expression_basis),
        ];
        let diag = cam.diagonal();
        let r = params.rotation.to_rotation_matrix();
        let pts = landmark_points(landmarks, geometry.as_slice(), params)?;
        for (l, (lm, (p, q))) in landmarks.landmarks.iter().zip(pts).enumerate() {
            let row = photo_rows + 2 * l;
            weights[row] = w.w_land;
            weights[row + 1] = w.w_land;
            if p.z <= 0.0 {
                continue;
            }
            let s = cam.project(&p)?;
            let scale = lm.confidence / diag;
            residuals[row] = scale * (s.x - lm.x);
            residuals[row + 1] = scale * (s.y - lm.y);
            let jp = cam.projection_jacobian(&p);
            let mut put = |j: usize, d: Vector3<f64>| {
                for a in 0..2 {
                    jacobian[(row + a, j)] = scale * (jp[a][0] * d.x + jp[a][1] * d.y + jp[a][2] * d.z);
                }
            };
            for k in 0..3 {
                put(active.rotation().start + k, Vector3::ith(k, 1.0).cross(&q));
                put(active.translation().start + k, Vector3::ith(k, 1.0));
            }
            let vi = 3 * lm.vertex as usize;
            for (range, mat) in shape_groups.clone() {
                let Some(range) = range else { continue };
                for (k, j) in range.enumerate() {
                    let b = Vector3::new(mat[(vi, k)], mat[(vi + 1, k)], mat[(vi + 2, k)]);
                    put(j, r * b);
                }
            }
        }

        // regularizer block, analytic
        let reg = residual_reg(params, basis)?;
        let stddevs: Vec<f64> = basis
            .geometry_stddevs
            .iter()
            .chain(&basis.reflectance_stddevs)
            .chain(&basis.expression_stddevs)
            .copied()
            .collect();
        for (i, (src, col)) in reg_cols.iter().enumerate() {
            let row = photo_rows + landmark_rows + i;
            residuals[row] = reg[*src];
            jacobian[(row, *col)] = 1.0 / stddevs[*src];
            weights[row] = w.w_reg;
        }

        Ok(SolverWorkspace {
            active,
            residuals,
            jacobian,
            weights,
            photo_rows,
            landmark_rows,
        })
    }

    /// `J^T W J` (symmetrized) and `-J^T W F`.
    pub fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        let sw = self.weights.map(f64::sqrt);
        let mut wj = self.jacobian.clone();
        for (i, mut row) in wj.row_iter_mut().enumerate() {
            row *= sw[i];
        }
        let wf = self.residuals.component_mul(&sw);
        let a = wj.tr_mul(&wj);
        let a = (&a + a.transpose()) * 0.5;
        let b = -wj.tr_mul(&wf);
        (a, b)
    }
}

/// Pairs of (index into the full regularizer vector, active column) for
/// the coefficient groups that are being solved.
fn reg_columns(active: &ActiveSet) -> Vec<(usize, usize)> {
    let d = active.dims;
    let mut out = Vec::new();
    if let Some(r) = active.alpha() {
        out.extend(r.enumerate());
    }
    if let Some(r) = active.beta() {
        out.extend(r.enumerate().map(|(k, j)| (d.alpha + k, j)));
    }
    out.extend(active.delta().enumerate().map(|(k, j)| (d.alpha + d.beta + k, j)));
    out
}

/// Outcome of fitting a single frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub params: FaceParameters,
    /// Set when the linear system could not be solved; `params` is then the
    /// initialization.
    pub flagged: bool,
    pub iterations: usize,
    /// Total energy at the start and after every accepted step.
    pub energies: Vec<f64>,
    /// Number of unknowns in the linear system.
    pub system_size: usize,
}

/// Damped Gauss-Newton on the reweighted energy.
pub fn fit_frame(
    frame: &RasterImage,
    landmarks: &LandmarkSet,
    basis: &FaceBasis,
    init: &FaceParameters,
    mode: FitMode,
    cam: &CameraIntrinsics,
    config: &FitConfig,
) -> Result<FitReport> {
    init.validate(basis)?;
    landmarks.validate(basis)?;
    config.weights.validate()?;
    let active = ActiveSet::new(mode, basis.dims());
    let energy = |p: &FaceParameters| total_energy(frame, landmarks, basis, p, &config.weights, cam).map(|e| e.total);

    let mut params = init.clone();
    let mut current = energy(&params)?;
    let mut energies = vec![current];
    let mut lambda = config.initial_damping;
    let mut iterations = 0;

    'outer: for it in 0..config.max_iters {
        iterations += 1;
        let blur = config.jacobian_blur * config.blur_decay.powi(it as i32);
        let ws = SolverWorkspace::assemble(frame, landmarks, basis, &params, active, cam, config, blur)?;
        let (a, b) = ws.normal_equations();
        let mean_diag = a.diagonal().mean().max(1e-12);
        let mut escalations = 0;
        loop {
            let mut damped = a.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * (a[(i, i)] + 1e-9 * mean_diag);
            }
            let Some(chol) = Cholesky::new(damped) else {
                escalations += 1;
                lambda *= 10.0;
                if escalations > config.max_damping_escalations {
                    log::warn!("normal equations could not be factorized; frame flagged");
                    return Ok(FitReport {
                        params: init.clone(),
                        flagged: true,
                        iterations,
                        energies,
                        system_size: active.len(),
                    });
                }
                continue;
            };
            let step = chol.solve(&b);
            let trial = active.apply(&params, step.as_slice());
            let e = match energy(&trial) {
                Ok(e) => e,
                Err(Error::EmptyForeground) => f64::INFINITY,
                Err(err) => return Err(err),
            };
            if e < current {
                if current - e < config.tolerance * current {
                    break 'outer;
                }
                debug_assert!(e <= current);
                params = trial;
                current = e;
                energies.push(e);
                lambda = (lambda * 0.1).max(1e-9);
                break;
            }
            escalations += 1;
            lambda *= 10.0;
            if escalations > config.max_damping_escalations {
                break 'outer;
            }
        }
    }

    params.gaze = gaze_from_iris(basis, &params, landmarks, cam);
    params.clamp_gaze();
    Ok(FitReport {
        params,
        flagged: false,
        iterations,
        energies,
        system_size: active.len(),
    })
}
