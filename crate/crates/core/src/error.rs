use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("parameter {name}: shape {found:?} does not match configured {expected:?}")]
    ParamShape { name: String, found: Vec<usize>, expected: Vec<usize> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// True for failures caused by non-finite values or divergence.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Tensor(TensorError::NonFinite { .. }) | Error::UndefinedMetric(_))
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format { .. } | Error::CorruptCheckpoint(_) | Error::VersionMismatch { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
