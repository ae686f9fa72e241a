//! Reverse-mode differentiation over dense tensors.

mod graph;
pub(crate) mod kernels;

pub use graph::{sigmoid, Graph, Var};
