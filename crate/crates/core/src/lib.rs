//! Reconstruction of stochastic dynamical systems from partially observed
//! time series with double-projection variational training.

pub mod attractor;
pub mod autodiff;
pub mod dynsys;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod fsio;
pub mod models;
pub mod rng;
pub mod signal;
pub mod training;

pub use error::{DsrError, Result};
