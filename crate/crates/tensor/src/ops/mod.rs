mod conv;
mod elementwise;
mod embedding;
mod linalg;
mod norm;
mod reduce;
mod shape;

pub use conv::conv_output_extent;
pub use norm::{NormMode, RunningStats, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM};
