//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Pass criterion numbers as arguments to
//! run a subset.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use nalgebra::{UnitQuaternion, Vector3};
use portrait_core::conditioning::{build_corpus, window_count, Padding, CHANNELS_PER_FRAME, DEFAULT_WINDOW};
use portrait_core::face_model::{synthesize_basis, FaceBasis, FaceParameters, ModelDims};
use portrait_core::image_formation::{rasterize_color, sh_basis, shade_vertex, CameraIntrinsics, RasterImage};
use portrait_core::reconstruction::{fit_frame, ActiveSet, FitConfig, FitMode, LandmarkSet, SolverWorkspace};
use portrait_core::transfer::{apply_transfer, TransferSpec};
use portrait_eval::{self_reenactment, Dataset, ReenactmentConfig};
use portrait_net::discriminator::{Discriminator, DiscriminatorConfig};
use portrait_net::generator::{Generator, GeneratorConfig};
use portrait_net::layers::{self, BatchNorm, Conv2d, ConvTranspose2d, Module, Param, INIT_STDDEV};
use portrait_net::tensor::{Geometry, Tensor};
use portrait_net::{loss, Network, NetworkConfig, TrainConfig};
use portrait_pipeline::{SceneConfig, SyntheticScene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("{what} took {t:.1?}, limit {limit:?}"))
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(gaussian(rng), gaussian(rng), gaussian(rng)).normalize()
}

// ---------------------------------------------------------------- 1

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn legendre(l: u32, m: u32, x: f64) -> f64 {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = 1.0;
    for i in 0..m {
        pmm *= (2 * i + 1) as f64 * s;
    }
    if l == m {
        return pmm;
    }
    let mut pm1 = x * (2 * m + 1) as f64 * pmm;
    for ll in (m + 2)..=l {
        let next = ((2 * ll - 1) as f64 * x * pm1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pm1;
        pm1 = next;
    }
    pm1
}

fn real_sh(l: u32, m: i32, theta: f64, phi: f64) -> f64 {
    let am = m.unsigned_abs();
    let k = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * factorial(l - am) / factorial(l + am)).sqrt();
    let p = legendre(l, am, theta.cos());
    match m.signum() {
        0 => k * p,
        1 => std::f64::consts::SQRT_2 * k * p * (am as f64 * phi).cos(),
        _ => std::f64::consts::SQRT_2 * k * p * (am as f64 * phi).sin(),
    }
}

fn math_oracles() -> Outcome {
    let start = Instant::now();
    const CASES: usize = 100;
    const TOL: f64 = 1e-10;
    let b = synthesize_basis(
        5,
        300,
        ModelDims {
            alpha: 12,
            beta: 12,
            delta: 10,
        },
    )
    .unwrap();
    let d = b.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut worst = BTreeMap::new();
    let mut note = |name: &'static str, err: f64| {
        let w = worst.entry(name).or_insert(0.0f64);
        *w = w.max(err);
    };

    for _ in 0..CASES {
        let alpha: Vec<f64> = (0..d.alpha).map(|_| gaussian(&mut rng)).collect();
        let delta: Vec<f64> = (0..d.delta).map(|_| gaussian(&mut rng)).collect();
        let got = b.evaluate_geometry(&alpha, &delta).map_err(|e| e.to_string())?;
        for row in 0..3 * b.vertex_count {
            let mut s = b.average_geometry[row];
            for (k, a) in alpha.iter().enumerate() {
                s += a * b.geometry_basis[(row, k)];
            }
            for (k, e) in delta.iter().enumerate() {
                s += e * b.expression_basis[(row, k)];
            }
            note("geometry", (got[row] - s).abs());
        }

        let beta: Vec<f64> = (0..d.beta).map(|_| gaussian(&mut rng)).collect();
        let refl = b.evaluate_reflectance(&beta).map_err(|e| e.to_string())?;
        for row in 0..3 * b.vertex_count {
            let mut s = b.average_reflectance[row];
            for (k, c) in beta.iter().enumerate() {
                s += c * b.reflectance_basis[(row, k)];
            }
            note("reflectance", (refl.raw[row] - s).abs());
        }

        let order = [
            (0, 0),
            (1, -1),
            (1, 0),
            (1, 1),
            (2, -2),
            (2, -1),
            (2, 0),
            (2, 1),
            (2, 2),
        ];
        let n = random_unit(&mut rng);
        let (theta, phi) = (n.z.clamp(-1.0, 1.0).acos(), n.y.atan2(n.x));
        let y = sh_basis(&n);
        for (i, &(l, m)) in order.iter().enumerate() {
            note("sh basis", (y[i] - real_sh(l, m, theta, phi)).abs());
        }
        let gamma: [f64; 27] = std::array::from_fn(|_| gaussian(&mut rng));
        let albedo: [f64; 3] = std::array::from_fn(|_| rng.random());
        let shaded = shade_vertex(albedo, &n, &gamma).map_err(|e| e.to_string())?;
        for c in 0..3 {
            let e: f64 = order
                .iter()
                .enumerate()
                .map(|(i, &(l, m))| gamma[9 * c + i] * real_sh(l, m, theta, phi))
                .sum();
            note("shading", (shaded[c] - albedo[c] * e).abs());
        }

        let len = rng.random_range(1..64);
        let real: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let fake: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let t = |v: &[f64]| Tensor::from_vec(1, 1, 1, v.len(), v.to_vec()).unwrap();
        let nf = len as f64;
        let lr: f64 = real.iter().map(|r| r.max(1e-12).ln()).sum();
        let lf: f64 = fake.iter().map(|f| (1.0 - f).max(1e-12).ln()).sum();
        let lg: f64 = fake.iter().map(|f| f.max(1e-12).ln()).sum();
        let l1: f64 = real.iter().zip(&fake).map(|(a, b)| (a - b).abs()).sum::<f64>() / nf;
        note(
            "disc loss",
            (loss::discriminator_loss(&t(&real), &t(&fake)).0 - (-lr - lf) / nf).abs(),
        );
        note("gen loss", (loss::generator_adversarial(&t(&fake)).0 + lg / nf).abs());
        note("l1 loss", (loss::l1(&t(&real), &t(&fake)).unwrap().0 - l1).abs());
    }
    within(start, Duration::from_secs(60), "oracles")?;
    let summary: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    match worst.iter().find(|(_, &v)| v.is_nan() || v > TOL) {
        Some((k, v)) => Err(format!("{k} off by {v:.2e}")),
        None => Ok(format!("{CASES} cases each, max errors: {}", summary.join(", "))),
    }
}

// ---------------------------------------------------------------- 2

fn with_background(img: &RasterImage) -> RasterImage {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            if img.pixel(x, y) == [0.0; 3] {
                out.set_pixel(x, y, [60.0 + x as f64, 80.0, 70.0 + y as f64]);
            }
        }
    }
    out
}

fn random_face(basis: &FaceBasis, rng: &mut impl Rng) -> FaceParameters {
    let mut p = FaceParameters::neutral(basis.dims());
    for (c, s) in p.alpha.iter_mut().zip(&basis.geometry_stddevs) {
        *c = 0.5 * s * gaussian(rng);
    }
    for (c, s) in p.beta.iter_mut().zip(&basis.reflectance_stddevs) {
        *c = 0.5 * s * gaussian(rng);
    }
    for (c, s) in p.delta.iter_mut().zip(&basis.expression_stddevs) {
        *c = 0.5 * s * gaussian(rng);
    }
    p.rotation = UnitQuaternion::from_scaled_axis(random_unit(rng) * rng.random_range(0.0..0.25));
    p.translation += Vector3::new(
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.3..0.3),
    );
    p
}

/// Largest bounding-box extent of the mean head.
fn head_size(basis: &FaceBasis) -> f64 {
    (0..3)
        .map(|axis| {
            let it = basis.average_geometry.iter().skip(axis).step_by(3);
            let (lo, hi) = it.fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .fold(0.0, f64::max)
}

fn fitting_round_trip() -> Outcome {
    let start = Instant::now();
    let basis = synthesize_basis(21, 512, ModelDims::default()).unwrap();
    let cam = CameraIntrinsics::default_for(64, 64);
    let head = head_size(&basis);
    let mut rng = ChaCha8Rng::seed_from_u64(2000);
    let (mut max_rot, mut max_trans) = (0.0f64, 0.0f64);
    for f in 0..20 {
        let truth = random_face(&basis, &mut rng);
        let frame = with_background(&rasterize_color(&basis, &truth, &cam).map_err(|e| e.to_string())?);
        let lm = LandmarkSet::from_params(&basis, &truth, &cam).map_err(|e| e.to_string())?;
        let mut init = truth.clone();
        init.rotation = UnitQuaternion::from_scaled_axis(random_unit(&mut rng) * 5f64.to_radians()) * truth.rotation;
        init.translation += random_unit(&mut rng) * 0.02 * head;
        for (d, s) in init.delta.iter_mut().zip(&basis.expression_stddevs) {
            *d += 0.2 * s * gaussian(&mut rng);
        }
        let rep = fit_frame(
            &frame,
            &lm,
            &basis,
            &init,
            FitMode::Tracking,
            &cam,
            &FitConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        ensure(rep.energies.windows(2).all(|w| w[1] <= w[0]), || {
            format!("frame {f}: energy increased: {:?}", rep.energies)
        })?;
        max_rot = max_rot.max(rep.params.rotation.angle_to(&truth.rotation).to_degrees());
        max_trans = max_trans.max((rep.params.translation - truth.translation).norm() / head);
    }
    within(start, Duration::from_secs(600), "fitting")?;
    let summary = format!(
        "20 frames at 64², max rotation {max_rot:.3}°, max translation {:.3}%",
        100.0 * max_trans
    );
    ensure(max_rot < 0.5 && max_trans < 0.005, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 3

fn structural_constants() -> Outcome {
    let dims = ModelDims::default();
    let p = FaceParameters::neutral(dims);
    let stored = 3 + p.translation.len() + p.alpha.len() + p.beta.len() + p.delta.len() + p.gaze.len() + p.sh.len();
    ensure(stored == 261 && p.scalar_count() == 261, || {
        format!("{stored} parameters")
    })?;

    let basis = synthesize_basis(5, 400, dims).unwrap();
    let cam = CameraIntrinsics::default_for(32, 32);
    let frame = rasterize_color(&basis, &p, &cam).map_err(|e| e.to_string())?;
    let lm = LandmarkSet::from_params(&basis, &p, &cam).map_err(|e| e.to_string())?;
    let active = ActiveSet::new(FitMode::Tracking, dims);
    let ws = SolverWorkspace::assemble(&frame, &lm, &basis, &p, active, &cam, &FitConfig::default(), 0.0)
        .map_err(|e| e.to_string())?;
    let (a, _) = ws.normal_equations();
    ensure(active.len() == 97 && (a.nrows(), a.ncols()) == (97, 97), || {
        format!("tracking system {}x{}", a.nrows(), a.ncols())
    })?;

    let net = NetworkConfig::for_window(32, DEFAULT_WINDOW, 4).map_err(|e| e.to_string())?;
    ensure(
        DEFAULT_WINDOW == 11 && net.generator.input_channels == 99 && CHANNELS_PER_FRAME * 11 == 99,
        || format!("{} conditioning channels", net.generator.input_channels),
    )?;

    let scene = SyntheticScene::generate(&SceneConfig {
        frames: 30,
        size: 16,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let scam = scene.config.camera();
    for w in [1, 5, 11] {
        let corpus = build_corpus(&scene.params, &scene.frames, &scene.basis, &scam, w, Padding::None)
            .map_err(|e| e.to_string())?;
        ensure(
            corpus.len() == 30 - (w - 1) && window_count(30, w, Padding::None) == 30 - (w - 1),
            || format!("corpus of {} for window {w}", corpus.len()),
        )?;
    }

    let t = TrainConfig::default();
    ensure(
        t.lambda_l1 == 100.0 && t.learning_rate == 2e-4 && t.first_momentum == 0.5,
        || format!("{t:?}"),
    )?;

    let network = Network::<f32>::new(NetworkConfig::for_window(32, DEFAULT_WINDOW, 2).unwrap(), 0).unwrap();
    let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
    network.visit(&mut |p| {
        if p.name.ends_with(".weight") {
            for &v in &p.value {
                n += 1;
                sum += v as f64;
                sq += (v as f64).powi(2);
            }
        }
    });
    let mean = sum / n as f64;
    let sd = (sq / n as f64 - mean * mean).sqrt();
    ensure(
        INIT_STDDEV == 0.2 && mean.abs() < 0.002 && (sd - 0.2).abs() < 0.002,
        || format!("init mean {mean:.4} sd {sd:.4} over {n} weights"),
    )?;
    Ok(format!(
        "261 params, 97 DoF, 99 channels, corpus N-(Nw-1), λ 100, lr 2e-4, β1 0.5, init sd {sd:.4} over {n} weights"
    ))
}

// ---------------------------------------------------------------- 4

const STEP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-4;

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(
        shape[0],
        shape[1],
        shape[2],
        shape[3],
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

/// Counts checked values and tracks the worst relative error.
#[derive(Default)]
struct GradStats {
    checked: usize,
    worst: f64,
}

impl GradStats {
    fn compare(&mut self, what: &str, analytic: f64, numeric: f64) -> Result<(), String> {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        self.checked += 1;
        self.worst = self.worst.max(err);
        ensure(err < GRAD_TOL, || {
            format!("{what}: analytic {analytic} numeric {numeric}")
        })
    }

    fn params<M: Module<f64> + Clone>(&mut self, m: &M, loss: impl Fn(&M) -> f64) -> Result<(), String> {
        let mut grads = Vec::new();
        m.visit(&mut |p: &Param<f64>| {
            if p.trainable {
                grads.push((p.name.clone(), p.grad.clone()));
            }
        });
        let nudge = |which: usize, elem: usize, delta: f64| {
            let mut out = m.clone();
            let mut k = 0;
            out.visit_mut(&mut |p: &mut Param<f64>| {
                if p.trainable {
                    if k == which {
                        p.value[elem] += delta;
                    }
                    k += 1;
                }
            });
            out
        };
        for (pi, (name, g)) in grads.iter().enumerate() {
            for (e, &analytic) in g.iter().enumerate() {
                let numeric = (loss(&nudge(pi, e, STEP)) - loss(&nudge(pi, e, -STEP))) / (2.0 * STEP);
                self.compare(&format!("{name}[{e}]"), analytic, numeric)?;
            }
        }
        Ok(())
    }

    fn input(
        &mut self,
        what: &str,
        x: &Tensor<f64>,
        analytic: &Tensor<f64>,
        loss: impl Fn(&Tensor<f64>) -> f64,
    ) -> Result<(), String> {
        for i in 0..x.data.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data[i] += STEP;
            m.data[i] -= STEP;
            self.compare(
                &format!("{what} input[{i}]"),
                analytic.data[i],
                (loss(&p) - loss(&m)) / (2.0 * STEP),
            )?;
        }
        Ok(())
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut s = GradStats::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4000);

    for g in [
        Geometry {
            kernel: 4,
            stride: 2,
            pad: 1,
        },
        Geometry {
            kernel: 3,
            stride: 1,
            pad: 1,
        },
    ] {
        let mut c = Conv2d::<f64>::new("conv", 3, 2, g, &mut rng);
        c.bias.value.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let x = random_tensor(&mut rng, [2, 3, 6, 6]);
        let r = random_tensor(&mut rng, c.forward(&x).shape());
        let dx = c.backward(&x, &r, true).unwrap();
        s.params(&c, |m| dot(&m.forward(&x), &r))?;
        s.input("conv", &x, &dx, |x| dot(&c.forward(x), &r))?;
    }

    let g = Geometry {
        kernel: 4,
        stride: 2,
        pad: 1,
    };
    let mut c = ConvTranspose2d::<f64>::new("deconv", 3, 2, g, &mut rng);
    c.bias.value.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    let x = random_tensor(&mut rng, [2, 3, 3, 4]);
    let r = random_tensor(&mut rng, c.forward(&x).shape());
    let dx = c.backward(&x, &r, true).unwrap();
    s.params(&c, |m| dot(&m.forward(&x), &r))?;
    s.input("deconv", &x, &dx, |x| dot(&c.forward(x), &r))?;

    let mut bn = BatchNorm::<f64>::new("bn", 3);
    bn.gamma.value.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
    bn.beta.value.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    let x = random_tensor(&mut rng, [3, 3, 2, 2]);
    let r = random_tensor(&mut rng, x.shape());
    let (_, cache) = bn.forward_train(&x);
    let dx = bn.backward(&cache, &r);
    s.params(&bn, |m| dot(&m.forward_train(&x).0, &r))?;
    s.input("batchnorm", &x, &dx, |x| dot(&bn.forward_train(x).0, &r))?;

    let mut x = random_tensor(&mut rng, [2, 2, 3, 3]);
    x.data.iter_mut().for_each(|v| *v += 0.05f64.copysign(*v));
    let r = random_tensor(&mut rng, x.shape());
    let y = layers::leaky_relu(&x, 0.2);
    s.input("leaky relu", &x, &layers::leaky_relu_backward(&y, &r, 0.2), |x| {
        dot(&layers::leaky_relu(x, 0.2), &r)
    })?;
    let y = layers::relu(&x);
    s.input("relu", &x, &layers::relu_backward(&y, &r), |x| {
        dot(&layers::relu(x), &r)
    })?;
    let y = layers::tanh(&x);
    s.input("tanh", &x, &layers::tanh_backward(&y, &r), |x| {
        dot(&layers::tanh(x), &r)
    })?;
    let y = layers::sigmoid(&x);
    s.input("sigmoid", &x, &layers::sigmoid_backward(&y, &r), |x| {
        dot(&layers::sigmoid(x), &r)
    })?;
    let mask = layers::dropout_mask::<f64>(x.data.len(), 0.5, &mut rng);
    s.input("dropout", &x, &layers::apply_mask(&r, &mask), |x| {
        dot(&layers::apply_mask(x, &mask), &r)
    })?;

    let scores = |rng: &mut ChaCha8Rng| {
        Tensor::from_vec(2, 1, 2, 2, (0..8).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap()
    };
    let (real, fake) = (scores(&mut rng), scores(&mut rng));
    s.input("gen loss", &fake, &loss::generator_adversarial(&fake).1, |f| {
        loss::generator_adversarial(f).0
    })?;
    let (_, gr, gf) = loss::discriminator_loss(&real, &fake);
    s.input("disc loss real", &real, &gr, |r| loss::discriminator_loss(r, &fake).0)?;
    s.input("disc loss fake", &fake, &gf, |f| loss::discriminator_loss(&real, f).0)?;
    let (pred, truth) = (
        random_tensor(&mut rng, [2, 3, 2, 2]),
        random_tensor(&mut rng, [2, 3, 2, 2]),
    );
    s.input("l1", &pred, &loss::l1(&pred, &truth).unwrap().1, |p| {
        loss::l1(p, &truth).unwrap().0
    })?;

    tiny_network(&mut s, &mut rng)?;
    within(start, Duration::from_secs(300), "gradient suite")?;
    Ok(format!("{} values, worst relative error {:.1e}", s.checked, s.worst))
}

fn tiny_network(s: &mut GradStats, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let cfg = GeneratorConfig {
        input_size: 8,
        input_channels: 4,
        down_channels: vec![2, 2, 2],
        up_channels: vec![2, 2, 3],
        dropout: vec![0.5, 0.0, 0.0],
        skips: vec![true, true, true],
    };
    let mut g = Generator::<f64>::new(cfg, 7).unwrap();
    g.visit_mut(&mut |p| {
        if p.name.ends_with(".bias") || p.name.ends_with(".beta") {
            p.value.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    });
    let dcfg = DiscriminatorConfig {
        input_size: 8,
        input_channels: 7,
        channels: vec![2, 2],
    };
    let mut d = Discriminator::<f64>::new(dcfg, 8).unwrap();
    let x = random_tensor(rng, [3, 4, 8, 8]);
    let y = random_tensor(rng, [3, 3, 8, 8]).map(|v| 0.9 * v);

    let gc = g.forward_train(&x, 9).unwrap();
    let fake = gc.output().clone();
    let dc = d.forward_train(&Discriminator::pair(&x, &fake).unwrap()).unwrap();
    let (_, d_adv) = d
        .clone()
        .backward(&dc, &loss::generator_adversarial(&dc.scores).1, true)
        .unwrap()
        .split(x.c);
    let g_l1 = loss::l1(&fake, &y).unwrap().1;
    let objective = |g: &Generator<f64>, (w_adv, w_l1): (f64, f64)| {
        let fake = g.forward_train(&x, 9).unwrap().output().clone();
        let scores = d
            .forward_train(&Discriminator::pair(&x, &fake).unwrap())
            .unwrap()
            .scores;
        w_adv * loss::generator_adversarial(&scores).0 + w_l1 * loss::l1(&fake, &y).unwrap().0
    };
    for (weights, dy) in [((1.0, 0.0), d_adv), ((0.0, 1.0), g_l1)] {
        let mut g = g.clone();
        g.zero_grad();
        g.backward(&gc, &dy);
        s.params(&g, |g| objective(g, weights))?;
    }

    let real_in = Discriminator::pair(&x, &y).unwrap();
    let fake_in = Discriminator::pair(&x, &fake).unwrap();
    let real_c = d.forward_train(&real_in).unwrap();
    let (_, gr, gf) = loss::discriminator_loss(&real_c.scores, &dc.scores);
    d.zero_grad();
    d.backward(&real_c, &gr, false);
    d.backward(&dc, &gf, false);
    s.params(&d, |d| {
        let r = d.forward_train(&real_in).unwrap().scores;
        let f = d.forward_train(&fake_in).unwrap().scores;
        loss::discriminator_loss(&r, &f).0
    })
}

// ---------------------------------------------------------------- 5

fn self_reenactment_at_desk_scale() -> Outcome {
    let start = Instant::now();
    let scene = SyntheticScene::generate(&SceneConfig::default()).map_err(|e| e.to_string())?;
    ensure(scene.frames.len() == 300 && scene.config.size == 32, || {
        "scene is not 300 frames at 32²".into()
    })?;
    let cam = scene.config.camera();
    let data = Dataset {
        basis: &scene.basis,
        cam: &cam,
        params: &scene.params,
        frames: &scene.frames,
    };
    let run = |window_size| {
        let cfg = ReenactmentConfig {
            window_size,
            width_divisor: 2,
            train: TrainConfig {
                iterations: 1000,
                ..Default::default()
            },
            seed: 0,
            ..Default::default()
        };
        self_reenactment(&data, &cfg).map_err(|e| e.to_string())
    };
    let single = run(1)?;
    let temporal = run(11)?;
    within(start, Duration::from_secs(3600), "self-reenactment")?;
    let (trained, untrained) = (temporal.trained.sequence_mean, temporal.untrained.sequence_mean);
    let one = single.trained.sequence_mean;
    let nn = temporal.nearest_neighbor.sequence_mean;
    let summary = format!(
        "Nw=11 trained {trained:.2} / untrained {untrained:.2}, Nw=1 trained {one:.2}, nearest neighbor {nn:.2}"
    );
    let failed: Vec<&str> = [
        (trained <= 0.5 * untrained, "a"),
        (trained <= one, "b"),
        (trained <= nn, "c"),
    ]
    .iter()
    .filter(|(ok, _)| !ok)
    .map(|(_, n)| *n)
    .collect();
    ensure(failed.is_empty(), || format!("{summary}; failed {}", failed.join(",")))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 6

fn random_track(rng: &mut impl Rng, n: usize) -> Vec<FaceParameters> {
    let dims = ModelDims {
        alpha: 4,
        beta: 3,
        delta: 5,
    };
    let mut base = FaceParameters::neutral(dims);
    base.alpha
        .iter_mut()
        .chain(base.beta.iter_mut())
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    (0..n)
        .map(|_| {
            let mut p = base.clone();
            p.rotation = UnitQuaternion::from_scaled_axis(random_unit(rng) * rng.random_range(0.0..1.0));
            p.translation = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(3.0..4.0),
            );
            p.delta.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            p.gaze = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
            p.sh.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            p
        })
        .collect()
}

fn transfer_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6000);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let source = random_track(&mut rng, 12);
        let target = random_track(&mut rng, 12);
        let err = |e: portrait_core::Error| format!("case {case}: {e}");

        let all = TransferSpec {
            identity_geometry: true,
            ..Default::default()
        };
        for spec in [TransferSpec::default(), all] {
            ensure(
                apply_transfer(&target, &target, &spec).map_err(err)?.params == target,
                || format!("case {case}: self-transfer is not bit-exact"),
            )?;
        }

        let half = TransferSpec {
            rotation_scale: 0.5,
            ..Default::default()
        };
        let out = apply_transfer(&source, &target, &half).map_err(err)?.params;
        for (o, s) in out.iter().zip(&source) {
            let want = (s.rotation * source[0].rotation.inverse()).scaled_axis() * 0.5;
            let got = (o.rotation * target[0].rotation.inverse()).scaled_axis();
            worst = worst.max((got - want).norm());
        }

        for (pose, expression, gaze) in [
            (false, true, true),
            (true, false, true),
            (true, true, false),
            (false, true, false),
        ] {
            let spec = TransferSpec {
                pose,
                expression,
                gaze,
                ..Default::default()
            };
            let out = apply_transfer(&source, &target, &spec).map_err(err)?.params;
            for (o, t) in out.iter().zip(&target) {
                let kept = (pose || (o.rotation == t.rotation && o.translation == t.translation))
                    && (expression || o.delta == t.delta)
                    && (gaze || o.gaze == t.gaze)
                    && o.alpha == t.alpha
                    && o.beta == t.beta
                    && o.sh == t.sh;
                ensure(kept, || {
                    format!("case {case}: disabled component changed under {spec:?}")
                })?;
            }
        }
    }
    ensure(worst <= 1e-9, || format!("half rotation off by {worst:.2e}"))?;
    Ok(format!(
        "20 cases, self-transfer bit-exact, half-rotation error {worst:.1e}, disabled components bit-preserved"
    ))
}

// ---------------------------------------------------------------- 7

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dvp(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dvp"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "dvp {}: {}",
            args.first().unwrap_or(&""),
            String::from_utf8_lossy(&out.stderr).trim()
        )
    })
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// One HTTP/1.1 exchange; returns the response body.
fn http(port: u16, method: &str, path: &str, body: &str) -> Result<Vec<u8>, String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).map_err(|e| e.to_string())?;
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nhost: localhost\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    )
    .map_err(|e| e.to_string())?;
    let mut resp = Vec::new();
    stream.read_to_end(&mut resp).map_err(|e| e.to_string())?;
    let split = resp
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or("malformed response")?;
    ensure(resp.starts_with(b"HTTP/1.1 200"), || {
        format!("{method} {path}: {}", String::from_utf8_lossy(&resp[..split]))
    })?;
    Ok(resp[split + 4..].to_vec())
}

/// Scripted editor session against `dvp serve`; returns the response bodies.
fn serve_session(config: &Path) -> Result<Vec<Vec<u8>>, String> {
    let port = TcpListener::bind("127.0.0.1:0")
        .and_then(|l| l.local_addr())
        .map_err(|e| e.to_string())?
        .port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_dvp"))
        .args([
            "serve",
            "--config",
            s(config),
            "--frame",
            "5",
            "--port",
            &port.to_string(),
        ])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let deadline = Instant::now() + Duration::from_secs(60);
    while TcpStream::connect(("127.0.0.1", port)).is_err() {
        if Instant::now() > deadline || child.try_wait().map_err(|e| e.to_string())?.is_some() {
            let _ = child.kill();
            return Err("editor service did not come up".into());
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    let script = [
        ("GET", "/v1/meta", ""),
        ("POST", "/v1/edit", r#"{"seq":1,"edit":{"rotation":[0.0,0.2,0.0]}}"#),
        (
            "POST",
            "/v1/edit",
            r#"{"seq":2,"edit":{"expression":[{"index":0,"value":0.5}]}}"#,
        ),
        ("GET", "/v1/frame?mode=conditioning", ""),
        ("GET", "/v1/frame?mode=output", ""),
        ("POST", "/v1/reset", ""),
        ("POST", "/v1/edit", r#"{"seq":3,"edit":{"gaze":[0.3,0.0,0.3,0.0]}}"#),
        ("GET", "/v1/frame?mode=output", ""),
        ("GET", "/v1/state", ""),
    ];
    let bodies: Result<Vec<_>, _> = script.iter().map(|(m, p, b)| http(port, m, p, b)).collect();
    let _ = child.kill();
    let _ = child.wait();
    bodies
}

fn project_run(root: &Path) -> Result<Vec<Vec<u8>>, String> {
    fs::create_dir_all(root).map_err(|e| e.to_string())?;
    let base = root.join("base.toml");
    fs::write(
        &base,
        "schema_version = 1\n[network]\nwindow_size = 3\nwidth_divisor = 8\n[train]\niterations = 30\n[fit]\nmax_iters = 3\n[evaluate]\nablation_windows = [1, 3]\n",
    )
    .map_err(|e| e.to_string())?;
    let data = root.join("data");
    dvp(&[
        "synth",
        "--config",
        s(&base),
        "--frames",
        "14",
        "--seed",
        "7",
        "--out",
        s(&data),
    ])?;
    let c = data.join("project.toml");
    let c = s(&c);
    let out = |p: &str| data.join("out").join(p);
    dvp(&["fit", "--config", c])?;
    dvp(&["train", "--config", c])?;
    dvp(&["infer", "--config", c, "--out", s(&out("inferred"))])?;
    dvp(&["evaluate", "--config", c, "--predictions", s(&out("inferred"))])?;
    dvp(&["evaluate", "--config", c, "--self-reenactment"])?;
    dvp(&[
        "transfer",
        "--config",
        c,
        "--source",
        s(&data.join("truth.jsonl")),
        "--target",
        s(&out("params.jsonl")),
        "--out",
        s(&out("transferred.jsonl")),
    ])?;
    dvp(&[
        "infer",
        "--config",
        c,
        "--params",
        s(&out("transferred.jsonl")),
        "--out",
        s(&out("reenacted")),
    ])?;
    serve_session(&data.join("project.toml"))
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let sa = project_run(&a)?;
    let sb = project_run(&b)?;
    let (ta, tb) = (tree(&a), tree(&b));
    ensure(ta.keys().eq(tb.keys()), || "runs wrote different file sets".into())?;
    if let Some((k, _)) = ta.iter().find(|(k, v)| tb[*k] != **v) {
        return Err(format!("{} differs between runs", k.display()));
    }
    let expected = [
        "data/out/weights.dvpw",
        "data/out/reports/predictions/summary.json",
        "data/out/reports/self_reenactment/ablation.csv",
        "data/out/reenacted/00013.png",
        "data/out/requests.jsonl",
    ];
    if let Some(f) = expected.iter().find(|f| !ta.contains_key(Path::new(f))) {
        return Err(format!("{f} was not written"));
    }
    ensure(sa == sb, || "editor service responses differ between runs".into())?;
    Ok(format!(
        "synth, fit, train, infer, evaluate, transfer and serve: {} files and {} responses identical",
        ta.len(),
        sa.len()
    ))
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        (1, "math oracles", math_oracles),
        (2, "fitting round trip", fitting_round_trip),
        (3, "structural constants", structural_constants),
        (4, "gradient suite", gradient_suite),
        (5, "desk-scale self-reenactment", self_reenactment_at_desk_scale),
        (6, "transfer identities", transfer_identities),
        (7, "CLI determinism", cli_determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail}) [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n} {name}: FAIL ({detail}) [{secs:.1}s]");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
