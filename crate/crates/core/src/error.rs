use std::io;
use std::path::PathBuf;

use slt_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("token id {id} outside vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("CTC alignment infeasible: {frames} frames cannot emit a target needing {required}")]
    InfeasibleAlignment { frames: usize, required: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("{path}: format error at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for numeric failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::GradientCheck(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
