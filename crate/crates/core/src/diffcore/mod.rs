//! Minimal reverse-mode differentiation: tensors, the computation tape, and
//! finite-difference checking.

mod graph;
pub mod gradcheck;
mod params;
mod tensor;

pub use graph::{softmax_values, Graph, LstmParams, Var, LOG_EPS};
pub use params::{BoundParams, ParamStore};
pub use tensor::{Precision, Real, Tensor};
