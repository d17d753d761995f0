//! Error reports and their on-disk form: a per-frame CSV, a summary JSON
//! and PNG error maps.

use std::fs;
use std::path::Path;

use portrait_core::image_formation::write_png_rgb8;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::metrics::{ErrorMap, MAX_PIXEL_ERROR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub window_size: usize,
    pub width: usize,
    pub height: usize,
    pub corpus_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub frame: usize,
    pub mean_error: f64,
    /// Mean over head pixels only, when the head is visible.
    pub foreground_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub label: String,
    pub fingerprint: Fingerprint,
    pub frames: Vec<FrameError>,
    pub sequence_mean: f64,
    pub foreground_mean: Option<f64>,
    #[serde(skip)]
    pub maps: Vec<ErrorMap>,
}

impl ErrorReport {
    /// `frames[i]` is the index of `maps[i]`; masks are optional per frame.
    pub fn new(
        label: &str,
        fingerprint: Fingerprint,
        frames: &[usize],
        maps: Vec<ErrorMap>,
        masks: &[Option<Vec<bool>>],
    ) -> Result<Self> {
        if frames.len() != maps.len() || masks.len() != maps.len() || maps.is_empty() {
            return Err(EvalError::Config(
                "one frame index and mask slot per error map required".into(),
            ));
        }
        let rows: Vec<FrameError> = frames
            .iter()
            .zip(&maps)
            .zip(masks)
            .map(|((&frame, m), mask)| FrameError {
                frame,
                mean_error: m.mean(),
                foreground_error: mask.as_ref().and_then(|k| m.masked_mean(k)),
            })
            .collect();
        let sequence_mean = rows.iter().map(|r| r.mean_error).sum::<f64>() / rows.len() as f64;
        let fg: Vec<f64> = rows.iter().filter_map(|r| r.foreground_error).collect();
        let foreground_mean = (!fg.is_empty()).then(|| fg.iter().sum::<f64>() / fg.len() as f64);
        Ok(ErrorReport {
            label: label.to_string(),
            fingerprint,
            frames: rows,
            sequence_mean,
            foreground_mean,
            maps,
        })
    }

    /// Writes `frames.csv`, `summary.json` and `maps/NNNNN.png` (heat
    /// palette) under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("maps"))?;
        let mut w = csv::Writer::from_path(dir.join("frames.csv"))?;
        w.write_record(["frame", "mean_error"])?;
        for r in &self.frames {
            w.write_record([r.frame.to_string(), r.mean_error.to_string()])?;
        }
        w.flush()?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(self)? + "\n")?;
        for (r, m) in self.frames.iter().zip(&self.maps) {
            write_png_rgb8(
                dir.join("maps").join(format!("{:05}.png", r.frame)),
                m.width,
                m.height,
                &heat_rgb(m, MAX_PIXEL_ERROR),
            )?;
        }
        Ok(())
    }
}

/// Linear grayscale: 0 is black, `scale` and above white.
pub fn gray_rgb(map: &ErrorMap, scale: f64) -> Vec<u8> {
    map.data
        .iter()
        .flat_map(|e| {
            let v = (e / scale).clamp(0.0, 1.0) * 255.0;
            [v.round() as u8; 3]
        })
        .collect()
}

/// Heat palette over `[0, scale]`: black, red at a third, yellow at two
/// thirds, white at the top, each leg linear.
pub fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 3.0;
    let ramp = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ramp(t), ramp(t - 1.0), ramp(t - 2.0)]
}

pub fn heat_rgb(map: &ErrorMap, scale: f64) -> Vec<u8> {
    map.data.iter().flat_map(|e| heat_color(e / scale)).collect()
}

/// Tiles RGB images of possibly different sizes into rows, padding with
/// black. Returns the grid size and pixels.
pub fn grid(rows: &[Vec<(usize, usize, Vec<u8>)>]) -> (usize, usize, Vec<u8>) {
    let cell_w = rows.iter().flatten().map(|c| c.0).max().unwrap_or(0);
    let cell_h = rows.iter().flatten().map(|c| c.1).max().unwrap_or(0);
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let (gw, gh) = (cols * cell_w, rows.len() * cell_h);
    let mut out = vec![0u8; gw * gh * 3];
    for (ri, row) in rows.iter().enumerate() {
        for (ci, (w, h, px)) in row.iter().enumerate() {
            for y in 0..*h {
                let dst = ((ri * cell_h + y) * gw + ci * cell_w) * 3;
                out[dst..dst + w * 3].copy_from_slice(&px[y * w * 3..(y + 1) * w * 3]);
            }
        }
    }
    (gw, gh, out)
}
