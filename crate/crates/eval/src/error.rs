use thiserror::Error;

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    Shape(usize, usize, usize, usize),
    #[error("images must be in the 8-bit range")]
    ColorSpace,
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("nearest-neighbor corpus is empty")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] portrait_core::Error),
    #[error(transparent)]
    Net(#[from] portrait_net::NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::Shape(..) => "E_SHAPE",
            EvalError::ColorSpace => "E_COLOR_SPACE",
            EvalError::TooFewFrames { .. } => "E_TOO_FEW_FRAMES",
            EvalError::EmptyCorpus => "E_EMPTY_CORPUS",
            EvalError::Config(_) => "E_CONFIG",
            EvalError::Core(e) => e.code(),
            EvalError::Net(e) => e.code(),
            EvalError::Io(_) => "E_IO",
            EvalError::Json(_) => "E_JSON",
            EvalError::Csv(_) => "E_CSV",
        }
    }
}
