use thiserror::Error;

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {0}")]
    NonFinite(usize),
    #[error("bad weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] portrait_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl NetError {
    pub fn code(&self) -> &'static str {
        match self {
            NetError::Shape(_) => "E_SHAPE",
            NetError::Config(_) => "E_CONFIG",
            NetError::NonFinite(_) => "E_NON_FINITE",
            NetError::Format(_) => "E_FORMAT",
            NetError::Core(e) => e.code(),
            NetError::Io(_) => "E_IO",
            NetError::Json(_) => "E_JSON",
            NetError::Csv(_) => "E_CSV",
        }
    }
}
