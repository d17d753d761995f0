//! Quantitative evaluation of reenactment results.

pub mod error;
pub mod metrics;
pub mod protocol;
pub mod reenactment;
pub mod report;

pub use error::{EvalError, Result};
pub use metrics::{foreground_mask, photometric_error, ErrorMap, MAX_PIXEL_ERROR};
pub use protocol::{
    expression_distance, nearest_neighbor, neighbor_distance, pose_distance, self_reenactment_split, split_frames,
    NeighborWeights,
};
pub use reenactment::{ablation_suite, self_reenactment, write_ablation, AblationAxes, Dataset, ReenactmentConfig};
pub use report::{ErrorReport, Fingerprint};
