//! Small differentiable-network core: dense and 2x2/stride-2 convolution layers,
//! softmax, ego-attention, the three Q-model families, Adam and JSON checkpoints.
//!
//! Parameters of a model live in one flat `f64` vector; layers address it by offset.
//! Gradients are computed by hand-written reverse passes driven by a [`Tape`].

mod adam;
mod attention;
mod checkpoint;
pub mod gradcheck;
mod layers;
mod model;
mod ops;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use attention::{attention_head, ego_attention_forward, AttentionParams, AttentionTrace, HeadParams};
pub use checkpoint::{Checkpoint, CheckpointHeader, FORMAT_VERSION};
pub use model::{ArchConfig, ModelKind, ParamSpec, QModel, QOutput, Tape, NUM_ACTIONS};
pub use ops::{affine, conv2d, softmax};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
