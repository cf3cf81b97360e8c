//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is a tape: every op appends a node whose parents already
//! exist, so node order is a topological order and [`Graph::backward`] is a
//! single reverse sweep. Graphs are cheap and meant to be built once per
//! example; independent graphs may be evaluated on different threads.

mod graph;
pub(crate) mod kernels;

pub use graph::{Gradients, Graph, Var};
pub(crate) use graph::softmax_in_place as softmax_rows;
