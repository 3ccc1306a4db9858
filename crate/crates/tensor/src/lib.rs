//! Dense row-major `f64` tensors with reverse-mode automatic differentiation.
//!
//! The operation set is the one needed by a small convolutional
//! encoder–decoder: matrix products, 2-D convolution, softmax variants,
//! batch and layer normalisation, embeddings and shape manipulation.
//! [`gradcheck`] verifies every backward rule against central differences.

pub mod error;
pub mod gradcheck;
mod kernels;
mod ops;
pub mod tensor;

pub use error::{Result, TensorError};
pub use ops::{conv_output_extent, NormMode, RunningStats, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM};
pub use tensor::{no_grad, ParentGrads, Tensor};
