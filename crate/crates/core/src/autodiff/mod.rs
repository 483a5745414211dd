//! Reverse-mode differentiation over dense tensors.

pub mod conv;
mod graph;

pub use conv::ConvGeom;
pub use graph::{BatchStats, Graph, Var};
#[allow(unused_imports)]
pub(crate) use graph::{sigmoid, softmax_buf};
