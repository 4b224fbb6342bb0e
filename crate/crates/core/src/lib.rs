//! Streaming provenance-graph anomaly detection.
//!
//! The pipeline: a disk-backed provenance graph store feeds bounded
//! in-memory subgraphs to a stacked ensemble of GraphSAGE-mean classifiers;
//! nodes no submodel can confidently classify to their own type are treated
//! as anomalous, queued, and escalated to system-level alerts with 2-hop
//! trace subgraphs.

pub mod alert;
pub mod attack;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod features;
pub mod gnn;
pub mod graph;
pub mod pipeline;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
