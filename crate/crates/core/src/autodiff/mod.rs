//! Reverse-mode automatic differentiation over dense `f64` tensors.

pub mod check;
mod graph;
mod tensor;

pub use graph::{Elementwise, Gradients, Graph, ParamId, Var};
pub use tensor::Tensor;


#[cfg(test)]
mod tests;
