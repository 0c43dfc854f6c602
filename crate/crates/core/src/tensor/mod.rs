//! Dense float64 arrays with a recorded graph for reverse-mode gradients.

mod array;
mod check;
mod graph;
pub mod kernels;
pub mod nn;

pub use array::{numel, Tensor};
pub use check::grad_check;
pub use graph::{Graph, NodeId, Var};
