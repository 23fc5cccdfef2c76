//! Accelerated AB/Push-Pull gradient tracking over time-varying directed
//! graphs, with heavy-ball and Nesterov momentum, plus the machinery to
//! certify linear convergence for a given step-size and momentum pair.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod output;
pub mod problems;
pub mod solver;
pub mod weights;

pub use error::{Error, Result};
