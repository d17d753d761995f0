use thiserror::Error;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error(transparent)]
    Core(#[from] portrait_core::Error),
    #[error(transparent)]
    Net(#[from] portrait_net::NetError),
    #[error(transparent)]
    Eval(#[from] portrait_eval::EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config write error: {0}")]
    TomlWrite(#[from] toml::ser::Error),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "E_CONFIG",
            PipelineError::Missing(_) => "E_MISSING",
            PipelineError::Core(e) => e.code(),
            PipelineError::Net(e) => e.code(),
            PipelineError::Eval(e) => e.code(),
            PipelineError::Io(_) => "E_IO",
            PipelineError::Json(_) => "E_JSON",
            PipelineError::Toml(_) | PipelineError::TomlWrite(_) => "E_CONFIG_PARSE",
        }
    }
}
