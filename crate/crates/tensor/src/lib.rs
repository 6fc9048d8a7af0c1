//! Dense `f64` tensors with tape-based reverse-mode differentiation, the
//! handful of primitives the decoders need, and an Adam optimizer.

mod error;
pub mod gradcheck;
mod graph;
mod kernels;
pub mod optim;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Activation, Graph, Var};
pub use kernels::Propagator;
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;
