//! Transformer with a visual patch encoder, a freezable instruction encoder
//! and a prefix-conditioned decoder over the unified vocabulary.

mod cache;
pub mod checkpoint;
mod config;
mod network;
pub mod ops;
mod params;

pub use cache::DecoderState;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use network::{cross_entropy_sum, image_patches, loss, Dropout, Example, Model, Trace, Trainable};
pub use ops::Activation;
pub use params::{Block, Group, Params, Tensor};
