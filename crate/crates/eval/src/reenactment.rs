//! Self-reenactment: train on the first two thirds of a tracked video,
//! drive the network with the last third's own parameters and compare
//! against the real frames.

use std::fs;
use std::path::Path;

use log::info;
use portrait_core::conditioning::{build_corpus, sliding_windows, Padding};
use portrait_core::face_model::{FaceBasis, FaceParameters};
use portrait_core::image_formation::{write_png_rgb8, CameraIntrinsics, RasterImage};
use portrait_net::{infer_sequence, train, Generator, LossRecord, Network, NetworkConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::metrics::{foreground_mask, photometric_error, MAX_PIXEL_ERROR};
use crate::protocol::{nearest_neighbor, self_reenactment_split, NeighborWeights};
use crate::report::{grid, heat_rgb, ErrorReport, Fingerprint};

/// A tracked video: per-frame parameters and the 8-bit frames.
#[derive(Clone, Copy)]
pub struct Dataset<'a> {
    pub basis: &'a FaceBasis,
    pub cam: &'a CameraIntrinsics,
    pub params: &'a [FaceParameters],
    pub frames: &'a [RasterImage],
}

impl Dataset<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.frames.len() {
            return Err(portrait_core::Error::length("video frames", self.params.len(), self.frames.len()).into());
        }
        for f in self.frames {
            if f.width != self.cam.width() || f.height != self.cam.height() {
                return Err(EvalError::Shape(f.width, f.height, self.cam.width(), self.cam.height()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReenactmentConfig {
    pub window_size: usize,
    pub width_divisor: usize,
    /// Use only the last `n` frames of the training portion.
    pub train_frames: Option<usize>,
    pub train: TrainConfig,
    pub seed: u64,
    pub neighbor_weights: NeighborWeights,
}

impl Default for ReenactmentConfig {
    fn default() -> Self {
        ReenactmentConfig {
            window_size: portrait_core::conditioning::DEFAULT_WINDOW,
            width_divisor: 4,
            train_frames: None,
            train: TrainConfig::default(),
            seed: 0,
            neighbor_weights: NeighborWeights::default(),
        }
    }
}

pub struct ReenactmentResult {
    pub trained: ErrorReport,
    pub untrained: ErrorReport,
    pub nearest_neighbor: ErrorReport,
    pub history: Vec<LossRecord>,
    pub network: Network<f32>,
    /// Network output for each test frame.
    pub outputs: Vec<RasterImage>,
}

/// 8-bit predictions for `test_start..` frames. Windows reach back into
/// the training portion; frames before the first are replicated.
pub fn predict_from(
    generator: &Generator<f32>,
    data: &Dataset,
    window: usize,
    test_start: usize,
) -> Result<Vec<RasterImage>> {
    let history = window - 1;
    let (start, padding) = if test_start >= history {
        (test_start - history, Padding::None)
    } else {
        (0, Padding::Replicate)
    };
    let windows = sliding_windows(&data.params[start..], data.basis, data.cam, window, padding)?;
    let skip = test_start - start - if padding == Padding::None { history } else { 0 };
    Ok(infer_sequence(generator, windows.skip(skip))?)
}

fn report(label: &str, data: &Dataset, fp: &Fingerprint, test: &[usize], preds: &[RasterImage]) -> Result<ErrorReport> {
    let mut maps = Vec::with_capacity(test.len());
    let mut masks = Vec::with_capacity(test.len());
    for (&f, p) in test.iter().zip(preds) {
        maps.push(photometric_error(p, &data.frames[f])?);
        masks.push(Some(foreground_mask(data.basis, &data.params[f], data.cam)?));
    }
    ErrorReport::new(label, fp.clone(), test, maps, &masks)
}

pub fn self_reenactment(data: &Dataset, config: &ReenactmentConfig) -> Result<ReenactmentResult> {
    data.validate()?;
    if config.window_size == 0 {
        return Err(EvalError::Config("window size must be positive".into()));
    }
    let n = data.params.len();
    let split = self_reenactment_split(n)?;
    let first = match config.train_frames {
        Some(k) if k == 0 || k > split => {
            return Err(EvalError::Config(format!(
                "training frame count {k} outside 1..={split}"
            )))
        }
        Some(k) => split - k,
        None => 0,
    };
    let corpus = build_corpus(
        &data.params[first..split],
        &data.frames[first..split],
        data.basis,
        data.cam,
        config.window_size,
        Padding::Replicate,
    )?;
    let pairs = corpus.materialize()?;
    let size = data.cam.width();
    if data.cam.height() != size {
        return Err(EvalError::Config("the network needs square frames".into()));
    }
    let net_cfg = NetworkConfig::for_window(size, config.window_size, config.width_divisor)?;
    let untrained = Network::new(net_cfg, config.seed)?;
    info!(
        "self-reenactment: {} training pairs, window {}, {} iterations",
        pairs.len(),
        config.window_size,
        config.train.iterations
    );
    let outcome = train(&pairs, untrained.clone(), &config.train)?;

    let fp = Fingerprint {
        window_size: config.window_size,
        width: size,
        height: data.cam.height(),
        corpus_size: pairs.len(),
    };
    let test: Vec<usize> = (split..n).collect();
    let outputs = predict_from(&outcome.network.generator, data, config.window_size, split)?;
    let trained = report("trained", data, &fp, &test, &outputs)?;
    let raw = predict_from(&untrained.generator, data, config.window_size, split)?;
    let untrained_report = report("untrained", data, &fp, &test, &raw)?;
    let nn: Vec<RasterImage> = test
        .iter()
        .map(|&f| {
            let (i, _) = nearest_neighbor(
                &data.params[f],
                &data.params[first..split],
                config.neighbor_weights,
                data.basis.interocular_distance(),
            )?;
            Ok(data.frames[first + i].clone())
        })
        .collect::<Result<_>>()?;
    let nn_report = report("nearest_neighbor", data, &fp, &test, &nn)?;
    Ok(ReenactmentResult {
        trained,
        untrained: untrained_report,
        nearest_neighbor: nn_report,
        history: outcome.history,
        network: outcome.network,
        outputs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationAxes {
    pub window_sizes: Vec<usize>,
    /// `None` trains on the whole training portion.
    pub train_frames: Vec<Option<usize>>,
}

impl Default for AblationAxes {
    fn default() -> Self {
        AblationAxes {
            window_sizes: vec![1, portrait_core::conditioning::DEFAULT_WINDOW],
            train_frames: vec![None],
        }
    }
}

pub struct AblationEntry {
    pub resolution: usize,
    pub window_size: usize,
    pub train_frames: Option<usize>,
    pub result: ReenactmentResult,
}

#[derive(Serialize)]
struct AblationRow {
    resolution: usize,
    window_size: usize,
    train_frames: Option<usize>,
    corpus_size: usize,
    trained: f64,
    untrained: f64,
    nearest_neighbor: f64,
    trained_foreground: Option<f64>,
}

/// Runs the protocol for every combination of dataset (one per
/// resolution), window size and training-set size.
pub fn ablation_suite(
    datasets: &[Dataset],
    axes: &AblationAxes,
    base: &ReenactmentConfig,
) -> Result<Vec<AblationEntry>> {
    let mut out = Vec::new();
    for data in datasets {
        for &w in &axes.window_sizes {
            for &t in &axes.train_frames {
                let cfg = ReenactmentConfig {
                    window_size: w,
                    train_frames: t,
                    ..base.clone()
                };
                out.push(AblationEntry {
                    resolution: data.cam.width(),
                    window_size: w,
                    train_frames: t,
                    result: self_reenactment(data, &cfg)?,
                });
            }
        }
    }
    Ok(out)
}

/// Writes `ablation.csv`, `ablation.json`, one report directory per entry
/// and `error_grid.png` (one row per entry, first `columns` test frames).
pub fn write_ablation(dir: impl AsRef<Path>, entries: &[AblationEntry], columns: usize) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let rows: Vec<AblationRow> = entries
        .iter()
        .map(|e| AblationRow {
            resolution: e.resolution,
            window_size: e.window_size,
            train_frames: e.train_frames,
            corpus_size: e.result.trained.fingerprint.corpus_size,
            trained: e.result.trained.sequence_mean,
            untrained: e.result.untrained.sequence_mean,
            nearest_neighbor: e.result.nearest_neighbor.sequence_mean,
            trained_foreground: e.result.trained.foreground_mean,
        })
        .collect();
    let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
    let mut tiles = Vec::new();
    for e in entries {
        let name = format!(
            "res{}_nw{}_train{}",
            e.resolution,
            e.window_size,
            e.train_frames.map_or("all".to_string(), |t| t.to_string())
        );
        e.result.trained.write(dir.join(&name))?;
        tiles.push(
            e.result
                .trained
                .maps
                .iter()
                .take(columns)
                .map(|m| (m.width, m.height, heat_rgb(m, MAX_PIXEL_ERROR)))
                .collect(),
        );
    }
    let (gw, gh, px) = grid(&tiles);
    if gw > 0 && gh > 0 {
        write_png_rgb8(dir.join("error_grid.png"), gw, gh, &px)?;
    }
    Ok(())
}
