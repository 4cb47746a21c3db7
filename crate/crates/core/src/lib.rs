//! Discrete Langevin posterior sampling for inverse problems with discrete
//! diffusion priors.
//!
//! The crate is organised bottom-up: token spaces and corruption processes,
//! denoising priors, forward operators, the posterior potential, the sampler
//! itself, and an exact enumeration oracle used to certify the sampler on
//! small state spaces.

#![warn(missing_docs)]

pub mod corruption;
/// Error type shared by every module.
pub mod error;
pub mod numeric;
pub mod operators;
pub mod oracle;
pub mod potential;
pub mod prior;
pub mod rng;
pub mod sampler;
pub mod tokenspace;

pub use error::{Error, Result};
