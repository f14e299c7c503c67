pub mod cli;
pub mod codecs;
pub mod data;
pub mod error;
pub mod eval;
pub mod inference;
pub mod instructions;
pub mod model;
pub mod scalar;
pub mod task;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
pub use task::Task;

/// Training and inference precision.
pub type Model = model::Model<f32>;
/// Double-precision shadow used for gradient checks.
pub type Model64 = model::Model<f64>;
pub type Params = model::Params<f32>;
