//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records operations as they are evaluated; [`Graph::backward`]
//! then propagates seed gradients to every node in reverse creation order.
//! Trainable weights live in a [`Params`] store and enter a graph by id.

mod adam;
mod graph;
mod params;

pub use adam::{Adam, AdamConfig};
pub use graph::{gelu, gelu_grad, Gradients, Graph, Var};
pub use params::{ParamId, Params};
