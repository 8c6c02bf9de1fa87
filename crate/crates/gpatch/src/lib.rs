// Index loops mirror the written-out math in the gradient and pooling
// kernels; iterator rewrites obscure it.
#![allow(clippy::needless_range_loop)]

//! GPatch: a cold-start recommendation toolkit.
//!
//! The library is split along the pipeline stages:
//!
//! - [`graph`]: the user-item bipartite interaction graph with ID interning.
//! - [`embed`]: warm embedding tables, a built-in BPR-MF trainer, and file IO
//!   for externally trained embeddings.
//! - [`walk`]: seeded random walks over the bipartite graph, mean-pooled into
//!   per-node layer representations (the warm-branch precompute).
//! - [`model`]: trainable parameters, forward scoring for the warm and
//!   patching branches, and analytic gradients of the joint squared loss.
//! - [`train`]: negative sampling, mini-batch Adam training, AUC-based early
//!   stopping, and checkpointing.
//! - [`eval`]: all-ranking evaluation (Recall/Precision/NDCG/AUC), paired
//!   significance testing, and an inference-time benchmark.
//! - [`data`]: interaction file IO, cold-start split generation, synthetic
//!   dataset generation, and feature loading.

pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod train;
pub mod walk;
mod rng;

pub use error::{Error, Result};
pub use graph::{BipartiteGraph, IdInterner, Side};
