//! Sharp attention networks built on a small reverse-mode autodiff engine.
//!
//! Everything in this crate is pure computation over in-memory tensors and
//! runs without `std`. File formats, dataset handling and the command-line
//! driver live in the companion `satn` crate.
//!
//! Module map:
//!
//! * [`diffcore`]: tensors, the tape, differentiable primitives, Adam.
//! * [`attention`]: channel normalization, Gumbel sampling, relaxed and hard
//!   masks, the temperature schedule and the baseline mask generators.
//! * [`regularizers`]: total-variation penalty and the composite loss.
//! * [`metriclearn`]: PK batches, pairwise distances, batch-hard triplet loss.
//! * [`network`]: residual backbone, sharp attention blocks, context unit, head.
//! * [`evalkit`]: gallery ranking, CMC and mAP.
//! * [`verify`]: the property suites behind `satn verify`.
#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod attention;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod metriclearn;
pub mod network;
pub mod regularizers;
pub mod verify;

pub use diffcore::{Graph, Real, Tensor, Var};
pub use error::{Error, Result};

/// The run-wide seedable generator. Every stochastic operation draws from it.
pub type Rng = rand_chacha::ChaCha8Rng;
