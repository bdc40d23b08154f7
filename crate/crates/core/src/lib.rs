//! Manifold-constrained training of a dense network: backpropagation
//! interleaved with ADMM updates that pull each sample's feature vector toward
//! a locally linear reconstruction from its same-class batch neighbours.
//!
//! Module map:
//! - [`linalg`]: row-major matrices, linear solves, pairwise distances
//! - [`net`]: feedforward trunk + softmax head, exact backprop, SGD
//! - [`manifold`]: intra-class kNN, LLE weights, projection strategies
//! - [`admm`]: augmented objective, penalty schedule, training modes, trainer
//! - [`data`]: synthetic helix sequences, clip segmentation, CSV datasets
//! - [`metrics`]: intra-class distance statistics, linear probe, PCA
//! - [`experiment`]: config-driven runs, H sweeps and reports

pub mod admm;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod manifold;
pub mod metrics;
pub mod net;
pub mod registry;
pub mod rng;

pub use error::{Error, Result};
