//! Reverse-mode automatic differentiation over small dense tensors.

mod graph;
mod optim;
mod tensor;

pub(crate) use graph::softmax_with_log_norm;
pub use graph::{Graph, Var};
pub use optim::{OptimizerKind, OptimizerState};
pub use tensor::Tensor;
