//! Dense tensors, a reverse-mode tape, and the helpers built on them.

mod check;
mod checkpoint;
mod graph;
pub mod scalar;
mod tensor;

pub use check::{finite_difference_check, BlockReport, FdReport};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use graph::{CustomOp, Gradients, Graph, NodeId};
pub use scalar::{Real, ScalarTape, Var};
pub use tensor::Tensor;
