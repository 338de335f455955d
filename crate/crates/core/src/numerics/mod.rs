//! Tensor storage and reverse-mode automatic differentiation.

mod conv;
pub mod gradcheck;
mod graph;
pub mod linalg;
mod ops;
mod tensor;

pub use graph::{Backward, Graph, Var};
pub use ops::matmul_channels_forward;
pub(crate) use ops::{sigmoid, softplus};
pub use tensor::Tensor;
