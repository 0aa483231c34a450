//! Causal dose-response estimation for continuous treatments with outcomes
//! in a metric space.
//!
//! Outcomes (distributions, SPD matrices, sphere points) are mapped by an
//! isometry into a Hilbert space, where outcome-regression, inverse
//! probability weighting, doubly robust and cross-fitted estimators of the
//! dose-response curve are plain averages. Estimates are pulled back to the
//! outcome space by projection.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod estimators;
pub mod frechet;
pub mod inference;
pub mod ingest;
pub mod kernel;
pub mod linalg;
pub mod nuisance;
pub mod output;
pub mod rng;
pub mod simlab;
pub mod stats;

pub use error::{Error, Result};
