pub mod ablation;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod dump;
pub mod encoder;
pub mod gradsuite;
pub mod error;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod posenc2d;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
