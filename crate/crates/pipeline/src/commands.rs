//! The work behind each `dvp` subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use portrait_core::conditioning::{build_corpus, sliding_windows, Padding};
use portrait_core::face_model::{write_basis, FaceBasis, FaceParameters};
use portrait_core::image_formation::{CameraIntrinsics, RasterImage};
use portrait_core::reconstruction::{read_parameter_sequence, track_sequence, write_parameter_sequence};
use portrait_core::transfer::apply_transfer;
use portrait_eval::{
    ablation_suite, foreground_mask, photometric_error, write_ablation, AblationAxes, Dataset, ErrorReport,
    Fingerprint, ReenactmentConfig,
};
use portrait_net::io::{read_weights, write_weights};
use portrait_net::train::write_history;
use portrait_net::{infer_sequence, train, Network, NetworkConfig};
use serde::Serialize;

use crate::config::ProjectConfig;
use crate::dataset::{load_basis, read_frames, read_landmarks, require, write_frames, write_landmarks};
use crate::error::{PipelineError, Result};
use crate::scene::SyntheticScene;

/// Frames, basis and camera of the configured video.
pub struct Video {
    pub frames: Vec<RasterImage>,
    pub basis: FaceBasis,
    pub cam: CameraIntrinsics,
}

impl Video {
    pub fn load(cfg: &ProjectConfig) -> Result<Self> {
        let frames = read_frames(&cfg.paths.frames)?;
        let cam = cfg.camera.intrinsics(frames[0].width, frames[0].height)?;
        Ok(Video {
            basis: load_basis(cfg)?,
            frames,
            cam,
        })
    }
}

fn read_params(path: &Path, basis: &FaceBasis) -> Result<Vec<FaceParameters>> {
    require(path, "parameter sequence")?;
    let params = read_parameter_sequence(path)?;
    if params.is_empty() {
        return Err(PipelineError::Missing(format!(
            "{} holds no parameters",
            path.display()
        )));
    }
    for p in &params {
        p.validate(basis)?;
    }
    Ok(params)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub frames: usize,
    pub size: usize,
    pub config: PathBuf,
}

/// Renders the configured scene into `out` and writes a project file
/// there that points at it: `frames/`, `landmarks/`, `truth.jsonl`,
/// `basis.dvpb` and `project.toml`.
pub fn synth(cfg: &ProjectConfig, out: &Path) -> Result<SynthSummary> {
    let scene = SyntheticScene::generate(&cfg.scene)?;
    fs::create_dir_all(out)?;
    write_frames(&out.join("frames"), &scene.frames)?;
    write_landmarks(&out.join("landmarks"), &scene.landmarks)?;
    write_parameter_sequence(out.join("truth.jsonl"), &scene.params)?;
    write_basis(out.join("basis.dvpb"), &scene.basis)?;
    let mut project = cfg.clone();
    project.paths.frames = "frames".into();
    project.paths.landmarks = "landmarks".into();
    project.paths.output = "out".into();
    project.paths.basis = Some("basis.dvpb".into());
    project.paths.params = None;
    project.basis.seed = cfg.scene.basis_seed;
    project.basis.vertex_count = cfg.scene.vertex_count;
    project.basis.dims = cfg.scene.dims;
    project.camera.focal_scale = cfg.scene.camera().focal_length_px / cfg.scene.size as f64;
    let config = out.join("project.toml");
    project.save(&config)?;
    info!(
        "synthesized {} frames of {}px into {}",
        scene.frames.len(),
        cfg.scene.size,
        out.display()
    );
    Ok(SynthSummary {
        frames: scene.frames.len(),
        size: cfg.scene.size,
        config,
    })
}

#[derive(Debug, Serialize)]
pub struct FitSummary {
    pub frames: usize,
    /// Frames whose fit failed or hit a bound.
    pub flagged: Vec<usize>,
    pub params: PathBuf,
}

/// Tracks every frame and writes `output/params.jsonl` plus
/// `output/fit_flags.json`.
pub fn fit(cfg: &ProjectConfig) -> Result<FitSummary> {
    let video = Video::load(cfg)?;
    let landmarks = read_landmarks(&cfg.paths.landmarks)?;
    let init = FaceParameters::neutral(video.basis.dims());
    let seq = track_sequence(&video.frames, &landmarks, &video.basis, &init, &video.cam, &cfg.fit)?;
    fs::create_dir_all(&cfg.paths.output)?;
    let path = cfg.paths.output.join("params.jsonl");
    write_parameter_sequence(&path, &seq.params)?;
    let flagged: Vec<usize> = seq
        .flagged
        .iter()
        .enumerate()
        .filter(|(_, f)| **f)
        .map(|(i, _)| i)
        .collect();
    write_json(&cfg.paths.output.join("fit_flags.json"), &flagged)?;
    if !flagged.is_empty() {
        warn!("{} frame(s) flagged during fitting", flagged.len());
    }
    Ok(FitSummary {
        frames: seq.params.len(),
        flagged,
        params: path,
    })
}

#[derive(Debug, Serialize)]
pub struct TransferSummary {
    pub frames: usize,
    pub repeated_target_frames: usize,
    pub clamped_gaze_frames: Vec<usize>,
}

/// Moves the source performance onto the target sequence using the
/// configured transfer spec.
pub fn transfer(cfg: &ProjectConfig, source: &Path, target: &Path, out: &Path) -> Result<TransferSummary> {
    let basis = load_basis(cfg)?;
    let src = read_params(source, &basis)?;
    let tgt = read_params(target, &basis)?;
    let result = apply_transfer(&src, &tgt, &cfg.transfer)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_parameter_sequence(out, &result.params)?;
    Ok(TransferSummary {
        frames: result.params.len(),
        repeated_target_frames: result.repeated_target_frames,
        clamped_gaze_frames: result.clamped_gaze_frames,
    })
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub corpus_size: usize,
    pub iterations: usize,
    pub stopped_at: Option<usize>,
    pub final_l1: Option<f64>,
    pub weights: PathBuf,
}

/// Trains on the configured frames and parameters; writes
/// `output/weights.dvpw` and `output/loss.csv`.
pub fn train_network(cfg: &ProjectConfig) -> Result<TrainSummary> {
    let video = Video::load(cfg)?;
    let params = read_params(&cfg.params_path(), &video.basis)?;
    if params.len() != video.frames.len() {
        return Err(portrait_core::Error::length("fitted parameters", video.frames.len(), params.len()).into());
    }
    let size = square_size(&video.cam)?;
    let w = cfg.network.window_size;
    let corpus = build_corpus(&params, &video.frames, &video.basis, &video.cam, w, Padding::None)?;
    let pairs = corpus.materialize()?;
    let net_cfg = NetworkConfig::for_window(size, w, cfg.network.width_divisor)?;
    let network = Network::new(net_cfg, cfg.network.seed)?;
    info!(
        "training on {} pairs for {} iterations",
        pairs.len(),
        cfg.train.iterations
    );
    let outcome = train(&pairs, network, &cfg.train)?;
    if let Some(it) = outcome.stopped_at {
        warn!("training stopped at iteration {it}");
    }
    fs::create_dir_all(&cfg.paths.output)?;
    let weights = cfg.weights_path();
    write_weights(&weights, &outcome.network)?;
    write_history(cfg.paths.output.join("loss.csv"), &outcome.history)?;
    Ok(TrainSummary {
        corpus_size: pairs.len(),
        iterations: outcome.history.len(),
        stopped_at: outcome.stopped_at,
        final_l1: outcome.history.last().map(|r| r.gen_l1),
        weights,
    })
}

fn square_size(cam: &CameraIntrinsics) -> Result<usize> {
    if cam.width() != cam.height() {
        return Err(PipelineError::Config(format!(
            "the network needs square frames, got {}x{}",
            cam.width(),
            cam.height()
        )));
    }
    Ok(cam.width())
}

fn load_network(path: &Path, window: usize, size: usize) -> Result<Network<f32>> {
    require(path, "weights")?;
    let net = read_weights(path)?;
    if net.window_size() != window || net.generator.config.input_size != size {
        return Err(PipelineError::Config(format!(
            "weights expect {} px windows of {} frames, the project uses {size} px and {window}",
            net.generator.config.input_size,
            net.window_size()
        )));
    }
    Ok(net)
}

#[derive(Debug, Serialize)]
pub struct InferSummary {
    pub frames: usize,
    pub out: PathBuf,
}

/// One output frame per parameter frame; the first frames repeat their
/// earliest history.
pub fn infer(cfg: &ProjectConfig, params: &Path, weights: &Path, out: &Path) -> Result<InferSummary> {
    let basis = load_basis(cfg)?;
    let params = read_params(params, &basis)?;
    let size = frame_size(cfg)?;
    let cam = cfg.camera.intrinsics(size, size)?;
    let net = load_network(weights, cfg.network.window_size, size)?;
    let windows = sliding_windows(&params, &basis, &cam, cfg.network.window_size, Padding::Replicate)?;
    let frames = infer_sequence(&net.generator, windows)?;
    write_frames(out, &frames)?;
    Ok(InferSummary {
        frames: frames.len(),
        out: out.to_path_buf(),
    })
}

/// Side length of the configured frames.
pub fn frame_size(cfg: &ProjectConfig) -> Result<usize> {
    let first = crate::dataset::numbered_files(&cfg.paths.frames, "png")?;
    let img = RasterImage::read_png(&first[0])?;
    if img.width != img.height {
        return Err(PipelineError::Config(format!(
            "frames are {}x{}, not square",
            img.width, img.height
        )));
    }
    Ok(img.width)
}

#[derive(Debug, Serialize)]
pub struct EvaluateSummary {
    pub frames: usize,
    pub sequence_mean: f64,
    pub foreground_mean: Option<f64>,
    pub report: PathBuf,
}

/// Compares predicted frames against the configured frames and writes the
/// report under `output/reports/<label>`.
pub fn evaluate(cfg: &ProjectConfig, predictions: &Path, label: &str) -> Result<EvaluateSummary> {
    let video = Video::load(cfg)?;
    let preds = read_frames(predictions)?;
    if preds.len() != video.frames.len() {
        return Err(portrait_core::Error::length("predicted frames", video.frames.len(), preds.len()).into());
    }
    let params_path = cfg.params_path();
    let params = if params_path.exists() {
        Some(read_params(&params_path, &video.basis)?)
    } else {
        None
    };
    let mut maps = Vec::with_capacity(preds.len());
    let mut masks = Vec::with_capacity(preds.len());
    for (i, (p, t)) in preds.iter().zip(&video.frames).enumerate() {
        maps.push(photometric_error(p, t)?);
        masks.push(match &params {
            Some(ps) => Some(foreground_mask(&video.basis, &ps[i], &video.cam)?),
            None => None,
        });
    }
    let w = cfg.network.window_size;
    let fp = Fingerprint {
        window_size: w,
        width: video.cam.width(),
        height: video.cam.height(),
        corpus_size: video.frames.len().saturating_sub(w - 1),
    };
    let indices: Vec<usize> = (0..preds.len()).collect();
    let report = ErrorReport::new(label, fp, &indices, maps, &masks)?;
    let dir = cfg.paths.output.join("reports").join(label);
    report.write(&dir)?;
    Ok(EvaluateSummary {
        frames: preds.len(),
        sequence_mean: report.sequence_mean,
        foreground_mean: report.foreground_mean,
        report: dir,
    })
}

#[derive(Debug, Serialize)]
pub struct AblationSummaryRow {
    pub window_size: usize,
    pub trained: f64,
    pub untrained: f64,
    pub nearest_neighbor: f64,
}

/// Self-reenactment over the configured window sizes; written to
/// `output/reports/self_reenactment`.
pub fn evaluate_self_reenactment(cfg: &ProjectConfig) -> Result<Vec<AblationSummaryRow>> {
    let video = Video::load(cfg)?;
    let params = read_params(&cfg.params_path(), &video.basis)?;
    let data = Dataset {
        basis: &video.basis,
        cam: &video.cam,
        params: &params,
        frames: &video.frames,
    };
    let base = ReenactmentConfig {
        window_size: cfg.network.window_size,
        width_divisor: cfg.network.width_divisor,
        train_frames: None,
        train: cfg.train.clone(),
        seed: cfg.network.seed,
        neighbor_weights: cfg.evaluate.neighbor_weights,
    };
    let axes = AblationAxes {
        window_sizes: cfg.evaluate.ablation_windows.clone(),
        train_frames: vec![None],
    };
    let entries = ablation_suite(&[data], &axes, &base)?;
    write_ablation(
        cfg.paths.output.join("reports").join("self_reenactment"),
        &entries,
        cfg.evaluate.grid_columns,
    )?;
    Ok(entries
        .iter()
        .map(|e| AblationSummaryRow {
            window_size: e.window_size,
            trained: e.result.trained.sequence_mean,
            untrained: e.result.untrained.sequence_mean,
            nearest_neighbor: e.result.nearest_neighbor.sequence_mean,
        })
        .collect())
}
