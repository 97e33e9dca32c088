//! Reverse-mode differentiation over dense `f64` arrays.

mod graph;
mod penalty;
mod tensor;

pub use graph::{Gradients, Graph, Primitive, Var};
pub use penalty::{input_gradient_norm, PenaltyMode};
pub use tensor::Tensor;
