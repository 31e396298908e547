//! Explainable graph representation learning over weighted pattern channels.
//!
//! Two learners share one idea: represent a graph per structural pattern
//! family (paths, trees, graphlets, cycles, cliques, wheels, stars) and
//! combine the channels with learnable simplex weights, so the weights
//! themselves explain which structure the representation relies on.
//!
//! - [`kernels`]: pattern-counting feature vectors, Gram matrices, and the
//!   weighted ensemble kernel with supervised-contrastive or KL objectives.
//! - [`gnn`]: per-pattern GCN encoders over sampled subgraphs, a weighted
//!   ensemble representation, and joint training of encoders, weights, and
//!   classifier with hand-written backprop.
//! - [`bounds`]: perturbation robustness and stability bound evaluators with
//!   an empirical dominance harness.
//! - [`data`], [`eval`]: TUDataset-format ingestion, planted-pattern
//!   synthetic generation, splits, and clustering/classification metrics.

pub mod bounds;
pub mod data;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod graph;
pub mod kernels;
pub mod linalg;
pub mod patterns;
pub mod util;

pub use error::{Error, Result};
