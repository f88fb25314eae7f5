//! Adaptive confusion energy (ACE) regularization at desk scale.
//!
//! A batch-wise regularizer for classifiers facing fine-grained and
//! long-tailed data at the same time: the batch confusion norm pulls the
//! predictions inside a batch toward each other (a convex rank surrogate on
//! the batch prediction matrix), and a per-class adaptive weight matrix
//! redistributes that confusion pressure away from tail classes. This crate
//! contains the loss terms with their analytic gradients, a small dense
//! linear algebra layer with a Jacobi SVD, a from-scratch softmax/MLP
//! classifier with manual backprop, synthetic fine-grained long-tailed data
//! generation, the training loop with baselines, and evaluation metrics.
//! The `ace-lab` binary wires everything into reproducible experiments.

pub mod ace;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod model;
pub mod seed;
pub mod train;

#[cfg(test)]
pub(crate) mod oracles;

pub use error::{Error, Result};
pub use linalg::{Matrix, SvdResult};
