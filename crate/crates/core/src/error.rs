use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by training, persistence and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty vocabulary: no word reaches min_count {min_count}")]
    EmptyVocabulary { min_count: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("word id {id} out of range for vocabulary of size {len}")]
    IndexOutOfRange { id: usize, len: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("vector has zero norm")]
    ZeroNorm,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("not enough usable data: {0}")]
    InsufficientData(String),

    #[error("non-finite value in embedding row {row} during epoch {epoch}")]
    NonFinite { row: usize, epoch: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
