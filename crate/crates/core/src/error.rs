use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("empty support: every position is masked")]
    EmptySupport,

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("token id {id} outside vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("search space of {count} candidates exceeds cap {cap}: {detail}")]
    CapExceeded { count: u128, cap: u128, detail: String },

    #[error("files are not line-aligned: {left} has {left_lines} lines, {right} has {right_lines}")]
    Alignment {
        left: PathBuf,
        left_lines: usize,
        right: PathBuf,
        right_lines: usize,
    },

    #[error("malformed input at {path}:{line}: {detail}")]
    Format {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::Domain { .. } | Error::EmptySupport => 3,
            _ => 2,
        }
    }
}
