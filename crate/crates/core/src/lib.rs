//! Error-informed selective online learning with distributed Gaussian processes.
//!
//! Each agent runs an exact GP over a bounded, streaming dataset and caches its
//! per-point prediction errors. Neighbors are scored by how well those errors
//! certify a cheap, truncated posterior mean, and a requester aggregates either
//! the single best neighbor (greedy) or a confidence band of them (adaptive).

// `!(x > 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod data;
pub mod error;
pub mod gp;
pub mod io;
pub mod kernel;
pub mod metric;
pub mod sim;

pub use error::{Error, Result};
