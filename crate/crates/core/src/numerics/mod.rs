//! Dense tensors, reverse-mode differentiation and first-order optimizers.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::grad_check;
#[cfg(test)]
pub(crate) use graph::sigmoid;
pub use graph::{Gradients, Graph, PrimitiveOp, Var};
pub use optim::{clip_global_norm, global_norm, Adam};
pub use tensor::Tensor;
