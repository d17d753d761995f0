//! Analysis-by-synthesis fitting of per-frame face parameters.

mod energy;
mod landmarks;
mod solver;
mod tracking;

pub use energy::{
    residual_reg, residuals_landmark, residuals_photo, total_energy, EnergyTerms, EnergyWeights, LandmarkResiduals,
    PhotoResiduals,
};
pub use landmarks::{gaze_from_iris, Landmark, LandmarkSet, LANDMARK_COUNT};
pub use solver::{fit_frame, ActiveSet, FitConfig, FitMode, FitReport, SolverWorkspace};
pub use tracking::{read_parameter_sequence, track_sequence, write_parameter_sequence, TrackedSequence};
