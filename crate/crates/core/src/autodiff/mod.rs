//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records operations as they execute; [`Graph::backward`] replays
//! them in reverse and returns gradients for every trainable leaf. One graph is
//! built per training step and dropped (or [`Graph::reset`]) afterwards.

pub mod check;
mod graph;
mod tensor;

pub use graph::{Axis, CustomOp, Gradients, Graph, Var};
pub use tensor::Tensor;
