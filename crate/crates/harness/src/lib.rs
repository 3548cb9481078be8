//! Experiment driver around `fedcog-core`: configuration, dataset files,
//! the end-to-end pipeline, equivalence verification and reports.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod report;

pub use error::{HarnessError, Result};
