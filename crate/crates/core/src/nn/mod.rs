//! Minimal CPU tensor library: layers with cached reverse-mode gradients,
//! He-uniform initialization, Adam, and binary tensor records.

mod adam;
pub mod checkpoint;
mod init;
mod layer;
pub mod ops;
mod scalar;
mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use init::{init_he_uniform, init_parameters};
pub use layer::{Layer, LayerSpec, Sequential, KERNEL};
pub use scalar::{matmul, Scalar};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward called on {0} layer without a cached forward pass")]
    MissingCache(&'static str),
    #[error("invalid layer specification: {0}")]
    InvalidSpec(String),
}
