// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact: {}", .0.display())]
    Missing(PathBuf),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("malformed {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(cfedit_core::Error),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Core(e) => match e {
                cfedit_core::Error::Argument(_) | cfedit_core::Error::Dimension { .. } => 2,
                _ => 4,
            },
            CliError::Format { .. } | CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> CliError {
        CliError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

impl From<cfedit_core::Error> for CliError {
    fn from(e: cfedit_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
