//! Minimal dense-tensor reverse-mode differentiation used by the networks.

mod graph;
mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub(crate) use scalar::axpy;
