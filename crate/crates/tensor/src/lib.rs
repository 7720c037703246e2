//! Minimal reverse-mode automatic differentiation over dense f64 arrays.
//!
//! The op set covers exactly what the graph encoder and the actor-critic
//! networks need: matmul, elementwise arithmetic, broadcasting adds/muls,
//! shape movement (transpose/permute/reshape/concat), the usual activations,
//! a stable last-axis softmax, temporal 1-D convolution, and reductions.
//! Gradients flow through a dynamic tape rebuilt per forward pass.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod store;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::AdamState;
pub use gradcheck::{grad_check, grad_check_masked, GradCheckReport};
pub use store::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: operand shapes {lhs:?} and {rhs:?} are incompatible")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not match buffer of {len} elements")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("concat of zero tensors")]
    EmptyConcat,
}
