use std::path::PathBuf;

use thiserror::Error;

/// Error categories; the CLI maps each onto an exit status.
#[derive(Debug, Error)]
pub enum ZslError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl ZslError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ZslError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        ZslError::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        ZslError::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        ZslError::InvalidArgument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        ZslError::Data(msg.into())
    }

    /// True when the failure originates in input data rather than configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            ZslError::Io { .. }
                | ZslError::MissingFile(_)
                | ZslError::Parse { .. }
                | ZslError::Dimension(_)
                | ZslError::Data(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, ZslError>;
