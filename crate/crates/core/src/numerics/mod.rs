//! Dense matrices, a reverse-mode tape over them, and the Adam optimiser.

mod adam;
mod graph;
mod tensor;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, NodeId, LAYER_NORM_EPS};
pub use tensor::Tensor2;
