//! Discretized double-phase energy with variable exponents and a singular Hardy term.

// Negated comparisons are how NaN gets rejected here.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod energy;
pub mod error;
pub mod exponents;
pub mod expr;
pub mod grid;
pub mod hardy;
pub mod modular;
pub mod sampling;
pub mod solver;
pub mod suites;

pub use error::{Error, Result};
