//! File formats, the toy dataset, run configuration, the training driver and
//! the command implementations behind the `satn` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ablate;
pub mod commands;
pub mod config;
pub mod container;
pub mod dataio;
pub mod error;
pub mod train;

pub use error::{Result, SatnError};
