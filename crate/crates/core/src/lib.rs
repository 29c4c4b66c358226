//! Uncertainty-estimation benchmark for tabular clinical data: feature
//! pipeline, model zoo, uncertainty metrics and OOD-detection protocols.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod io_util;
pub mod metrics;
pub mod models;
pub mod numerics;

pub use error::{Error, Result};
