use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config rejected: {0}")]
    Schema(String),

    #[error(transparent)]
    Module(#[from] collab_core::Error),

    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },

    #[error("{0}")]
    Runtime(String),

    #[error("assertion failed: {0}")]
    Assertion(String),
}

impl CliError {
    /// 2 config, 3 runtime, 4 scientific assertion.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Module(_) | CliError::Io { .. } | CliError::Runtime(_) => 3,
            CliError::Assertion(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            message: e.to_string(),
        }
    }
}
