//! Dense tensors, reverse-mode differentiation, Adam and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use graph::{softmax_rows, Graph, Var};
pub use tensor::Tensor;
