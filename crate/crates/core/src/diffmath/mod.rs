//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Everything trainable in this crate (MLPs, the flow prior, the SAC losses)
//! is expressed through [`Graph`]. A graph is built fresh for every forward
//! pass, differentiated once, and dropped.

pub mod check;
mod graph;
mod matrix;

pub use graph::{Axis, Binary, Graph, Reduce, Tensor, Unary};
pub use matrix::Matrix;
