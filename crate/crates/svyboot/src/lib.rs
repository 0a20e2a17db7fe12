//! Command-line front end and file formats for `svyboot-core`.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod io;
pub mod parallel;
pub mod report;

pub use error::{AppError, AppResult, ErrorKind};
