//! Federated learning over graphs whose nodes are split across parties.
//!
//! The crate covers partitioning a global graph into per-party local graphs,
//! decoupling each local graph, running exact two-step federated propagation,
//! auditing and repairing structural feature leakage, and training task heads
//! with federated optimizers.

pub mod decouple;
pub mod error;
pub mod fedprop;
pub mod fedtrain;
pub mod graph;
pub mod learn;
pub mod partition;
pub mod privacy;

pub use error::{Error, Result};
