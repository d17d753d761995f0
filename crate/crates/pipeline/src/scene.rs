//! Scripted synthetic portrait videos with known parameters.
//!
//! Frames show the shaded model head over a static backdrop, plus a hair
//! mass behind the head hanging from a damped spring, so it lags and
//! overshoots head motion. The hair is not part of the face model; only
//! motion history predicts where it is.

use nalgebra::{UnitQuaternion, Vector2};
use portrait_core::face_model::{synthesize_basis, FaceBasis, FaceParameters, ModelDims, EYE_CLOSURE, JAW_OPEN};
use portrait_core::image_formation::{
    rasterize_color, render_fragments, CameraIntrinsics, ColorSpace, PosedMesh, RasterImage,
};
use portrait_core::reconstruction::LandmarkSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub frames: usize,
    pub size: usize,
    pub basis_seed: u64,
    pub vertex_count: usize,
    pub dims: ModelDims,
    /// Standard deviation of per-pixel sensor noise in 8-bit levels.
    pub noise_level: f64,
    /// Spring constant pulling the hair toward its rest point, per frame².
    pub hair_stiffness: f64,
    /// Velocity damping of the hair per frame.
    pub hair_damping: f64,
    /// Scales every motion amplitude.
    pub motion: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            frames: 300,
            size: 32,
            basis_seed: 0,
            vertex_count: 1200,
            dims: ModelDims::default(),
            noise_level: 3.0,
            hair_stiffness: 0.03,
            hair_damping: 0.12,
            motion: 1.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.size < 8 {
            return Err(PipelineError::Config(
                "a scene needs frames and at least 8x8 pixels".into(),
            ));
        }
        let spring = 0.0 < self.hair_stiffness && self.hair_stiffness <= 1.0;
        if !spring || !(0.0..=1.0).contains(&self.hair_damping) {
            return Err(PipelineError::Config(
                "hair stiffness must lie in (0, 1], damping in [0, 1]".into(),
            ));
        }
        if self.noise_level < 0.0 || self.motion < 0.0 {
            return Err(PipelineError::Config("noise and motion must be non-negative".into()));
        }
        Ok(())
    }

    pub fn camera(&self) -> CameraIntrinsics {
        CameraIntrinsics::default_for(self.size, self.size)
    }
}

/// One sinusoid with a seeded period and phase.
#[derive(Clone, Copy, Debug)]
struct Wave {
    amplitude: f64,
    period: f64,
    phase: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, amplitude: f64, periods: std::ops::Range<f64>) -> Self {
        Wave {
            amplitude,
            period: rng.random_range(periods),
            phase: rng.random_range(0.0..TAU),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.amplitude * (TAU * t / self.period + self.phase).sin()
    }
}

pub struct SyntheticScene {
    pub config: SceneConfig,
    pub basis: FaceBasis,
    pub params: Vec<FaceParameters>,
    pub frames: Vec<RasterImage>,
    pub landmarks: Vec<LandmarkSet>,
    /// Screen position of the hair center per frame.
    pub hair: Vec<[f64; 2]>,
}

impl SyntheticScene {
    pub fn generate(config: &SceneConfig) -> Result<Self> {
        config.validate()?;
        let basis = synthesize_basis(config.basis_seed, config.vertex_count, config.dims)?;
        let params = trajectory(config, &basis);
        let cam = config.camera();
        let backdrop = backdrop(config);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e_6f69_7365);
        let noise = Normal::new(0.0, config.noise_level.max(f64::MIN_POSITIVE)).unwrap();
        let radius = |p: &FaceParameters| cam.focal_length_px / p.translation.z;
        let mut spring: Option<(Vector2<f64>, Vector2<f64>)> = None;
        let mut frames = Vec::with_capacity(params.len());
        let mut landmarks = Vec::with_capacity(params.len());
        let mut hair = Vec::with_capacity(params.len());
        for p in &params {
            let head = cam.project(&p.translation)?;
            let target = head + yaw_sway(p) * radius(p);
            let (h, v) = match spring {
                None => (target, Vector2::zeros()),
                Some((h, v)) => {
                    let v = v * (1.0 - config.hair_damping) + (target - h) * config.hair_stiffness;
                    (h + v, v)
                }
            };
            spring = Some((h, v));
            hair.push([h.x, h.y]);
            let mut img = backdrop.clone();
            draw_hair(&mut img, h, radius(p));
            let face = rasterize_color(&basis, p, &cam)?;
            let posed = PosedMesh::new(&basis, p)?;
            for (x, y, _) in render_fragments(&basis, &posed, &cam).iter_covered() {
                img.set_pixel(x, y, face.pixel(x, y));
            }
            if config.noise_level > 0.0 {
                img.data.iter_mut().for_each(|v| *v += noise.sample(&mut noise_rng));
            }
            img.data.iter_mut().for_each(|v| *v = v.round().clamp(0.0, 255.0));
            frames.push(img);
            landmarks.push(LandmarkSet::from_params(&basis, p, &cam)?);
        }
        Ok(SyntheticScene {
            config: config.clone(),
            basis,
            params,
            frames,
            landmarks,
            hair,
        })
    }
}

/// Hair offset from the head center, in head radii, swung by yaw.
fn yaw_sway(p: &FaceParameters) -> Vector2<f64> {
    let (_, yaw, _) = p.rotation.euler_angles();
    Vector2::new(-1.4 * yaw, -0.3)
}

fn draw_hair(img: &mut RasterImage, center: Vector2<f64>, radius: f64) {
    let (rx, ry) = (1.2 * radius, 1.1 * radius);
    for y in 0..img.height {
        for x in 0..img.width {
            let dx = (x as f64 + 0.5 - center.x) / rx;
            let dy = (y as f64 + 0.5 - center.y) / ry;
            let d = dx * dx + dy * dy;
            if d <= 1.0 {
                let shade = 1.0 - 0.35 * d;
                img.set_pixel(x, y, [110.0 * shade, 62.0 * shade, 30.0 * shade]);
            }
        }
    }
}

fn backdrop(config: &SceneConfig) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6261_636b);
    let s = config.size as f64;
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..110.0));
    let slope: [f64; 3] = std::array::from_fn(|_| rng.random_range(-60.0..60.0));
    let boxes: Vec<([f64; 4], [f64; 3])> = (0..3)
        .map(|_| {
            let x0 = rng.random_range(0.0..0.8);
            let y0 = rng.random_range(0.0..0.8);
            let rect = [x0, y0, x0 + rng.random_range(0.1..0.3), y0 + rng.random_range(0.1..0.3)];
            (rect, std::array::from_fn(|_| rng.random_range(30.0..230.0)))
        })
        .collect();
    let mut img = RasterImage::black(config.size, config.size, ColorSpace::Raw);
    for y in 0..config.size {
        for x in 0..config.size {
            let (u, v) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
            let mut c: [f64; 3] = std::array::from_fn(|k| base[k] + slope[k] * (0.6 * u + 0.4 * v));
            for (r, col) in &boxes {
                if u >= r[0] && u < r[2] && v >= r[1] && v < r[3] {
                    c = *col;
                }
            }
            img.set_pixel(x, y, c);
        }
    }
    img
}

/// Smooth pose, expression and gaze curves with an identity drawn from the
/// model's prior.
pub fn trajectory(config: &SceneConfig, basis: &FaceBasis) -> Vec<FaceParameters> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let m = config.motion;
    let mut neutral = FaceParameters::neutral(basis.dims());
    let normal = Normal::new(0.0, 0.5).unwrap();
    for (a, s) in neutral.alpha.iter_mut().zip(&basis.geometry_stddevs) {
        *a = s * normal.sample(&mut rng);
    }
    for (b, s) in neutral.beta.iter_mut().zip(&basis.reflectance_stddevs) {
        *b = s * normal.sample(&mut rng);
    }
    let yaw = [
        Wave::random(&mut rng, 0.35 * m, 70.0..110.0),
        Wave::random(&mut rng, 0.12 * m, 20.0..30.0),
    ];
    let nod = Wave::random(&mut rng, 0.12 * m, 50.0..70.0);
    let tilt = Wave::random(&mut rng, 0.08 * m, 35.0..50.0);
    let trans = [
        Wave::random(&mut rng, 0.15 * m, 60.0..90.0),
        Wave::random(&mut rng, 0.08 * m, 40.0..60.0),
        Wave::random(&mut rng, 0.2 * m, 60.0..80.0),
    ];
    let jaw = Wave::random(&mut rng, 1.5 * m, 14.0..22.0);
    let expr: Vec<Wave> = (0..basis.dims().delta)
        .map(|k| Wave::random(&mut rng, 0.8 * m / (1.0 + 0.3 * k as f64), 15.0..60.0))
        .collect();
    let gaze = [
        Wave::random(&mut rng, 0.3 * m, 30.0..45.0),
        Wave::random(&mut rng, 0.15 * m, 25.0..35.0),
    ];
    let blink_period = rng.random_range(35usize..50);
    let blink_phase = rng.random_range(0..blink_period);
    (0..config.frames)
        .map(|f| {
            let t = f as f64;
            let mut p = neutral.clone();
            // x nods, y turns, z tilts in camera coordinates
            p.rotation = UnitQuaternion::from_euler_angles(nod.at(t), yaw[0].at(t) + yaw[1].at(t), tilt.at(t));
            p.translation.x += trans[0].at(t);
            p.translation.y += trans[1].at(t);
            p.translation.z += trans[2].at(t);
            for (k, (d, w)) in p.delta.iter_mut().zip(&expr).enumerate() {
                *d = basis.expression_stddevs[k] * w.at(t);
            }
            p.delta[JAW_OPEN] = basis.expression_stddevs[JAW_OPEN] * jaw.at(t).max(0.0);
            let blinking = (f + blink_phase) % blink_period < 3;
            p.delta[EYE_CLOSURE] = if blinking {
                2.0 * basis.expression_stddevs[EYE_CLOSURE]
            } else {
                0.0
            };
            let (gy, gp) = (gaze[0].at(t), gaze[1].at(t));
            p.gaze = [gy, gp, gy, gp];
            p
        })
        .collect()
}
