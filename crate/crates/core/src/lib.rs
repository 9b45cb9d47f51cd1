//! Self-sensing proprioception for SMA-actuated soft limbs.

// Negated comparisons are how inputs reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beam;
pub mod config;
pub mod demo;
pub mod detector;
pub mod error;
pub mod estimators;
pub mod generate;
pub mod io;
pub mod plant;
pub mod poly;
pub mod safety;

pub use error::{Error, Result};
