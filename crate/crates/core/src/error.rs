use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("vertex count {0} is too small to carry eye annotations")]
    TooFewVertices(usize),
    #[error("quaternion norm {0} is not 1 within tolerance")]
    NonUnitQuaternion(f64),
    #[error("point at depth {0} lies behind the camera")]
    BehindCamera(f64),
    #[error("normal of length {0} is not unit length")]
    NonUnitNormal(f64),
    #[error("vertex {0} has no non-degenerate incident triangle")]
    DegenerateNormal(usize),
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    ImageSizeMismatch(usize, usize, usize, usize),
    #[error("value {value} outside range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("head is not visible in the synthetic render")]
    EmptyForeground,
    #[error("linear system could not be factorized after damping escalation")]
    CholeskyFailure,
    #[error("sequence of length {len} is shorter than window size {window}")]
    SequenceTooShort { len: usize, window: usize },
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn length(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::LengthMismatch { what, expected, actual }
    }

    /// Short stable identifier used by command-line error reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::LengthMismatch { .. } => "E_LENGTH",
            Error::InvalidArgument(_) => "E_ARGUMENT",
            Error::TooFewVertices(_) => "E_VERTEX_COUNT",
            Error::NonUnitQuaternion(_) => "E_QUATERNION",
            Error::BehindCamera(_) => "E_BEHIND_CAMERA",
            Error::NonUnitNormal(_) => "E_NORMAL",
            Error::DegenerateNormal(_) => "E_DEGENERATE",
            Error::ImageSizeMismatch(..) => "E_IMAGE_SIZE",
            Error::OutOfRange { .. } => "E_RANGE",
            Error::EmptyForeground => "E_EMPTY_FOREGROUND",
            Error::CholeskyFailure => "E_CHOLESKY",
            Error::SequenceTooShort { .. } => "E_SEQUENCE",
            Error::Format(_) => "E_FORMAT",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }
}
