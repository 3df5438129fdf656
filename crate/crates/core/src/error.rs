use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {axis} mismatch (expected {expected}, got {actual})")]
    Shape {
        op: &'static str,
        axis: String,
        expected: usize,
        actual: usize,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("stale trace: {0}")]
    StaleTrace(String),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        axis: impl Into<String>,
        expected: usize,
        actual: usize,
    ) -> Self {
        Error::Shape {
            op,
            axis: axis.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
