//! Orchestration around the core library: configuration, synthetic data,
//! the `dvp` command-line tool and the editor service.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod scene;
pub mod service;

pub use config::ProjectConfig;
pub use error::{PipelineError, Result};
pub use scene::{SceneConfig, SyntheticScene};
