//! Distilling deep ensembles into shared-core multi-head students with
//! correctness, aggregation, individuality and weight-diversity losses, and
//! measuring how well the student keeps the ensemble's uncertainty split.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod report;
pub mod training;
pub mod uncertainty;

pub use error::{Error, Result};
