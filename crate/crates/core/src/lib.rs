//! Sparse compositional metric learning.
//!
//! A metric is a nonnegative combination of rank-one projections
//! `M = sum_i w_i b_i b_i^T` over a fixed dictionary of unit directions. This
//! crate builds the dictionary (local discriminant directions over k-means
//! regions), generates triplet constraints, and learns the weights in three
//! flavors: one global metric, several task metrics sharing a sparse subset of
//! the dictionary, and a smoothly varying metric tensor over a kernel-PCA
//! embedding. k-NN evaluation, dataset I/O and an experiment driver are
//! included.
//!
//! Data-parallel loops go through [`exec::Exec`]; with the `parallel` feature
//! (default) they run on rayon, otherwise sequentially.

pub mod basisgen;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod io;
pub mod kmeans;
mod linalg;
pub mod metric;
pub mod models;
pub mod optim;
pub mod triplets;

pub use dataset::{Dataset, NormalizationState, Standardizer};
pub use error::{Result, ScmlError};
pub use exec::Exec;
pub use metric::{BasisSet, Provenance, Triplet, WeightVector};
