use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("alignment conflict: {0}")]
    Conflict(String),

    #[error("no trainable tokens in translation corpus")]
    NoTrainableTokens,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown id {0} in embedding table")]
    UnknownId(usize),

    #[error("validation set is empty; supply fixed thresholds instead")]
    EmptyValidation,

    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
