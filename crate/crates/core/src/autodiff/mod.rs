//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod conv;
mod graph;
mod optim;
mod params;
mod tensor;

pub use conv::ConvGeometry;
pub use graph::{Grads, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
