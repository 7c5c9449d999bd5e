//! Transformer predictor: configuration, parameters, forward pass and checkpoints.

mod checkpoint;
mod config;
mod model;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{ModelConfig, Readout, SelfContext};
pub use model::{positional_code, positional_matrix, Forward};
pub use params::{layout, ModelParams, ParamSpec};
