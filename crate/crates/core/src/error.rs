use routenet_tensor::TensorError;
use thiserror::Error;

use crate::instance::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible tour: {0}")]
    Infeasible(#[from] Violation),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("degenerate instance: {0}")]
    Degenerate(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{what} supports at most {limit} nodes, got {n}")]
    SizeLimit {
        what: &'static str,
        limit: usize,
        n: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("decoding stuck: {0}")]
    DecodeStuck(String),

    #[error("non-finite loss at step {step} (instance seed {seed})")]
    NonFiniteLoss { step: u64, seed: u64 },

    #[error("decoder selection failed: {0}")]
    Selection(String),

    #[error(transparent)]
    Numeric(#[from] TensorError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
