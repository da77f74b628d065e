#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Deterministic training and optimizer benchmarking for small dense
//! classifiers: SGD, Adam and the Foxtsage learning-rate population
//! search, with the metrics and statistics used to compare them.

pub mod datasets;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod optimizers;
pub mod training;

pub use error::{Error, Result};
