//! Minimal reverse-mode autodiff over 5D tensors and the convolutional
//! autoencoder used for skull completion.

mod kernels;
mod model;
mod tape;
mod tensor;

pub use model::{Activation, Forward, LayerPlan, Model, ModelConfig, ParamInfo};
pub use tape::{Tape, Var};
pub use tensor::{numel, Tensor};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("tape already consumed by a backward pass")]
    NoTape,
    #[error("backward needs a scalar output, got shape {0:?}")]
    NotScalar([usize; 5]),
    #[error("unknown variable {0}")]
    UnknownVar(usize),
}
