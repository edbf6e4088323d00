use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    /// Outputs were written but at least one metric is undefined.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: fedakd_core::Error,
    },
    #[error(transparent)]
    Core(#[from] fedakd_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn file(path: &Path, source: fedakd_core::Error) -> Self {
        match source {
            fedakd_core::Error::Io(e) => CliError::io(path, e),
            source => CliError::File {
                path: path.to_path_buf(),
                source,
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::UndefinedMetric(_) => 3,
            _ => 1,
        }
    }
}
