use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::landmarks::LandmarkSet;
use super::solver::{fit_frame, FitConfig, FitMode, FitReport};
use crate::error::{Error, Result};
use crate::face_model::{FaceBasis, FaceParameters};
use crate::image_formation::{CameraIntrinsics, RasterImage};

/// Per-frame parameters of a tracked sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackedSequence {
    pub params: Vec<FaceParameters>,
    /// True where the frame's fit failed and the previous parameters were
    /// carried forward.
    pub flagged: Vec<bool>,
}

/// Fits the first frame in full mode, then tracks every following frame
/// starting from the previous solution with identity frozen.
pub fn track_sequence(
    frames: &[RasterImage],
    landmarks: &[LandmarkSet],
    basis: &FaceBasis,
    init: &FaceParameters,
    cam: &CameraIntrinsics,
    config: &FitConfig,
) -> Result<TrackedSequence> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames to track".into()));
    }
    if landmarks.len() != frames.len() {
        return Err(Error::length("landmark files", frames.len(), landmarks.len()));
    }
    let mut params = Vec::with_capacity(frames.len());
    let mut flagged = Vec::with_capacity(frames.len());
    let mut prev = init.clone();
    for (f, (frame, lm)) in frames.iter().zip(landmarks).enumerate() {
        let mode = if f == 0 { FitMode::Full } else { FitMode::Tracking };
        let outcome = fit_frame(frame, lm, basis, &prev, mode, cam, config);
        let (p, bad) = match outcome {
            Ok(FitReport { params, flagged, .. }) => (params, flagged),
            Err(e @ (Error::EmptyForeground | Error::CholeskyFailure | Error::BehindCamera(_))) => {
                log::warn!("frame {f}: {e}; carrying previous parameters forward");
                (prev.clone(), true)
            }
            Err(e) => return Err(e),
        };
        log::debug!("frame {f} fitted ({mode:?})");
        prev = p.clone();
        params.push(p);
        flagged.push(bad);
    }
    Ok(TrackedSequence { params, flagged })
}

/// One JSON document per line.
pub fn write_parameter_sequence(path: impl AsRef<Path>, seq: &[FaceParameters]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for p in seq {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_parameter_sequence(path: impl AsRef<Path>) -> Result<Vec<FaceParameters>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face_model::ModelDims;

    #[test]
    fn jsonl_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = FaceParameters::neutral(ModelDims {
            alpha: 2,
            beta: 2,
            delta: 2,
        });
        p.alpha[0] = 0.1 + 0.2;
        p.translation.x = 1.0 / 3.0;
        let path = dir.path().join("p.jsonl");
        write_parameter_sequence(&path, &[p.clone(), p.clone()]).unwrap();
        assert_eq!(read_parameter_sequence(&path).unwrap(), vec![p.clone(), p]);
    }

    #[test]
    fn empty_sequence_rejected() {
        let basis = crate::face_model::synthesize_basis(
            1,
            200,
            ModelDims {
                alpha: 2,
                beta: 2,
                delta: 2,
            },
        )
        .unwrap();
        let p = FaceParameters::neutral(basis.dims());
        let cam = CameraIntrinsics::default_for(16, 16);
        assert!(track_sequence(&[], &[], &basis, &p, &cam, &FitConfig::default()).is_err());
    }
}
