//! Allocation-only core of a class-incremental rehearsal laboratory.
//!
//! Everything in this crate is a pure computation over owned buffers: a dense
//! feed-forward classifier with analytic gradients ([`nn`]), scenario and
//! synthetic-data construction ([`scenario`]), rehearsal-set policies
//! ([`rehearsal`]), the rehearsal-aware SGD loop ([`rsgd`]), last-layer
//! interference coefficients ([`interference`]), forgetting metrics
//! ([`forgetting`]) and rank statistics with the step-wise leave-one-out
//! protocol ([`stats`]).
//!
//! File formats, confidence intervals, experiment orchestration and the CLI
//! live in the `cilab` companion crate.
//!
//! All arithmetic is `f64` with sequential, index-ordered reductions, and all
//! randomness is drawn from caller-supplied generators, so results are a pure
//! function of the inputs and seeds.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod forgetting;
pub mod interference;
pub mod nn;
pub mod rehearsal;
pub mod rsgd;
pub mod scenario;
pub mod stats;

pub use error::{Error, Result};
