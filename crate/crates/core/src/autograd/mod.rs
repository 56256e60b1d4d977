//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! The operator set is exactly what the network needs: 2-D convolution,
//! batch normalisation, pooling, elementwise arithmetic with a channel
//! broadcast, channel split/concat, linear layers and the classification
//! losses. Every operator allocates a fresh output buffer.

pub mod check;
mod conv;
mod loss;
mod norm;
mod ops;
mod pool;
mod tensor;

use thiserror::Error;

pub use conv::Conv2dGeom;
pub use loss::margin_cosine;
pub use norm::{BatchStats, NormMode};
pub use ops::sigmoid;
pub use tensor::Tensor;

/// Element type of every tensor.
pub type Scalar = f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid geometry in {op}: {detail}")]
    Geometry { op: &'static str, detail: String },
    #[error("expected a single-element tensor, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("{0}: row with zero norm cannot be normalised")]
    ZeroNorm(&'static str),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
