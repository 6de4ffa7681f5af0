//! Tensor core: forward/backward passes for dense, ReLU, dropout,
//! softmax + cross-entropy, 1-D convolution, 1-D max pooling and GRU,
//! plus optimizers, finite-difference checking and a tensor file format.

pub mod container;
pub mod gradcheck;
pub mod gru;
pub mod layers;
pub mod ops;
pub mod optim;
mod tensor;

use thiserror::Error;

pub use gru::{gru_cell, gru_layer, GruParams};
pub use layers::{Cache, Layer, Sequential};
pub use optim::{OptimizerConfig, OptimizerState};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dropout rate {0} is outside [0, 1)")]
    InvalidRate(f64),
    #[error("sequence of length {len} is shorter than window {window}")]
    SequenceTooShort { len: usize, window: usize },
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("tensor container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
