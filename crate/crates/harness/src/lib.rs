//! Experiment harness: synthetic data, image IO, metrics, configuration and
//! the end-to-end runner behind the `dlps` command-line tool.

#![warn(missing_docs)]

pub mod config;
pub mod dataset;
/// Error type of the harness.
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod pnm;
pub mod verify;

pub use error::{HarnessError, Result};
