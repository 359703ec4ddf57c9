use std::path::PathBuf;

use pcp_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("record {record}: field `{field}`: {reason}")]
    Schema {
        record: usize,
        field: String,
        reason: String,
    },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {reason}", path.display())]
    Image { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(record: usize, field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Schema {
            record,
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by malformed inputs rather than the runtime.
    pub fn is_validation(&self) -> bool {
        matches!(self, Self::Schema { .. } | Self::Data(_) | Self::Image { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
