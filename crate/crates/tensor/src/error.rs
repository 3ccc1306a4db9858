use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid configuration: {msg}")]
    Config { op: &'static str, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{op}: index {index} out of range for extent {extent}")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        TensorError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn config(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Config {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
