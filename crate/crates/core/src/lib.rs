//! ASHGCL: self-supervised node representation learning on heterogeneous
//! graphs by contrasting three views of the target nodes — first-order
//! neighborhoods, meta-path neighborhoods, and an attribute-similarity
//! graph — with attribute-enhanced positive sampling.
//!
//! The crate is organized along the pipeline:
//!
//! - [`graph`]: the heterogeneous graph data model, dataset IO, meta-path
//!   adjacency composition, and feature masking.
//! - [`views`]: materialization of the three per-view neighborhood
//!   structures.
//! - [`tape`]: a small reverse-mode differentiation engine over rank-2
//!   tensors; every gradient is checked against finite differences.
//! - [`model`]: the three view encoders, the shared projection head, and
//!   the local/global contrastive objective.
//! - [`sampling`]: structural and attribute-aware positive set mining.
//! - [`train`]: the full-graph training loop (Adam, early stopping,
//!   checkpointing, embedding export).
//! - [`eval`]: downstream evaluation of frozen embeddings (linear probe
//!   classification and k-means clustering).

pub mod config;
pub mod eval;
pub mod graph;
pub mod manifest;
pub mod model;
pub mod sampling;
pub mod tape;
pub mod train;
pub mod views;


pub use graph::HeteroGraph;
