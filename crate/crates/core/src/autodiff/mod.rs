//! Dense-tensor computation graph with reverse-mode differentiation.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{sigmoid, Graph, Var};
pub use tensor::Tensor;
