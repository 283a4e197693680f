use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Transport,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
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

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error(
        "checksum mismatch for {path}: manifest says {expected:#010x}, blob has {actual:#010x}"
    )]
    Checksum {
        path: PathBuf,
        expected: u32,
        actual: u32,
    },

    #[error("non-finite value in row `{id}`")]
    NonFinite { id: String },

    #[error("no gold labels present; run label extraction first")]
    MissingGoldLabels,

    #[error("response has no `Answer:` line: {raw:?}")]
    MissingAnswer { raw: String },

    #[error(transparent)]
    Transport(#[from] crate::llm::TransportError),

    #[error("transport failed after {attempts} attempts (backoff ms {backoff_ms:?}): {last}")]
    RetriesExhausted {
        attempts: u32,
        backoff_ms: Vec<u64>,
        last: crate::llm::TransportError,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Transport(_) | Error::RetriesExhausted { .. } => ErrorKind::Transport,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
