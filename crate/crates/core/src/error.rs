use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
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

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("logit provider failed after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },

    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),

    #[error(transparent)]
    Tagger(#[from] crate::pii::TaggerError),

    #[error("leak guard: {0}")]
    Leak(String),

    #[error("run aborted: {failed} of {total} documents failed (limit {limit:.3})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit: f64,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
