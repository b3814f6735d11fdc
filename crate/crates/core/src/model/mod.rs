//! The language-identification network and its checkpoint format.

mod checkpoint;
mod config;
mod forward;
mod params;

use thiserror::Error;

use crate::tensor::TensorError;

pub use checkpoint::{Checkpoint, CheckpointError, MAGIC, VERSION};
pub use config::{Frontend, ModelConfig, ScaleMode, ShapePlan, Variant};
pub use forward::{attention_head, classify, forward, multi_head_attention, Forward, HeadVars, Inference};
pub use params::{batchnorm_layers, layout, Bound, Init, ModelParams, ParamSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
