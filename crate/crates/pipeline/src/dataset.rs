//! Videos as numbered PNG directories, with landmark JSON files numbered
//! the same way.

use std::fs;
use std::path::{Path, PathBuf};

use portrait_core::face_model::{read_basis, synthesize_basis, FaceBasis};
use portrait_core::image_formation::RasterImage;
use portrait_core::reconstruction::LandmarkSet;

use crate::config::ProjectConfig;
use crate::error::{PipelineError, Result};

pub fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:05}.{ext}")
}

/// Files `00000.<ext>`, `00001.<ext>`, ... in `dir`. Numbering must start
/// at zero and have no gaps.
pub fn numbered_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| PipelineError::Missing(format!("{}: {e}", dir.display())))?;
    let mut indexed = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let Some(i) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        indexed.push((i, path));
    }
    indexed.sort();
    for (k, (i, path)) in indexed.iter().enumerate() {
        if *i != k {
            return Err(PipelineError::Missing(format!(
                "{}: expected frame {k} before {}",
                dir.display(),
                path.display()
            )));
        }
    }
    if indexed.is_empty() {
        return Err(PipelineError::Missing(format!("{}: no .{ext} frames", dir.display())));
    }
    Ok(indexed.into_iter().map(|(_, p)| p).collect())
}

pub fn read_frames(dir: &Path) -> Result<Vec<RasterImage>> {
    let frames = numbered_files(dir, "png")?
        .iter()
        .map(RasterImage::read_png)
        .collect::<portrait_core::Result<Vec<_>>>()?;
    let (w, h) = (frames[0].width, frames[0].height);
    if let Some(f) = frames.iter().find(|f| f.width != w || f.height != h) {
        return Err(PipelineError::Config(format!(
            "{}: frames differ in size ({w}x{h} vs {}x{})",
            dir.display(),
            f.width,
            f.height
        )));
    }
    Ok(frames)
}

pub fn write_frames(dir: &Path, frames: &[RasterImage]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        f.write_png(dir.join(frame_name(i, "png")))?;
    }
    Ok(())
}

pub fn read_landmarks(dir: &Path) -> Result<Vec<LandmarkSet>> {
    Ok(numbered_files(dir, "json")?
        .iter()
        .map(LandmarkSet::read_json)
        .collect::<portrait_core::Result<Vec<_>>>()?)
}

pub fn write_landmarks(dir: &Path, sets: &[LandmarkSet]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in sets.iter().enumerate() {
        s.write_json(dir.join(frame_name(i, "json")))?;
    }
    Ok(())
}

/// The configured basis file, or the basis synthesized from `[basis]`.
pub fn load_basis(cfg: &ProjectConfig) -> Result<FaceBasis> {
    match &cfg.paths.basis {
        Some(p) => {
            if !p.exists() {
                return Err(PipelineError::Missing(format!("basis {}", p.display())));
            }
            Ok(read_basis(p)?)
        }
        None => Ok(synthesize_basis(
            cfg.basis.seed,
            cfg.basis.vertex_count,
            cfg.basis.dims,
        )?),
    }
}

pub fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Missing(format!("{what} {}", path.display())))
    }
}
