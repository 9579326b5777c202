//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor)s.

pub mod container;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;

pub use graph::{Gradients, Graph, Reduction, Var};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{ParamId, ParamStore};

#[cfg(test)]
mod tests;
