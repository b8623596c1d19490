//! Experiment harness for the class-incremental rehearsal laboratory:
//! configuration files, seeded runs with interference diagnostics,
//! benchmark sweeps, the controlled NIC/SIC study, confidence intervals and
//! CSV/JSON reports.

pub mod bench;
pub mod ci;
pub mod config;
pub mod controlled;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod io;
pub mod seeds;

pub use error::{LabError, LabResult};
