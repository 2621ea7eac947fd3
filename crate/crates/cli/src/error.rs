use thiserror::Error;

use gebsde::ModelError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config error: {0}")]
    Model(#[from] ModelError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("numerical failure in stage `{stage}`: {message}")]
    Numerical { stage: String, message: String },
}

impl CliError {
    pub fn numerical(stage: &str, e: impl std::fmt::Display) -> Self {
        CliError::Numerical {
            stage: stage.into(),
            message: e.to_string(),
        }
    }

    /// 1 for configuration problems, 2 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Model(_) | CliError::Io { .. } => 1,
            CliError::Numerical { .. } => 2,
        }
    }
}
