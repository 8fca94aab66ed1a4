//! Dense tensors with tape-based reverse-mode differentiation.

mod check;
mod graph;
mod params;
mod tensor;

pub use check::{grad_check, grad_check_params, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamSet};
pub use tensor::Tensor;
