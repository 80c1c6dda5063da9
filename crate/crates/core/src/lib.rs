//! Cellwise-robust Gaussian mixture estimation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod constraints;
pub mod data;
pub mod error;
pub mod estimator;
pub mod gauss;
pub mod init;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod simlab;
pub mod stats;
pub mod study;

#[cfg(test)]
pub(crate) mod testutil;

pub use data::{CellMask, DataSet, FitConfig, FitResult, MixtureParams, PenaltyMode, Posterior};
pub use error::{Error, Result};
pub use estimator::{fit, fit_from, fit_two_phase, InitialState, TwoPhaseFit};
pub use init::InitConfig;
