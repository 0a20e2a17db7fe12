//! Hypothesis tests for complex survey data calibrated with bootstrap
//! replicate weights.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! front end, and thread-pool execution live in the `svyboot` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bootstrap;
pub mod categorical;
pub mod data;
pub mod designs;
mod error;
pub mod exec;
pub mod linalg;
pub mod models;
pub mod refdist;
pub mod regression;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
