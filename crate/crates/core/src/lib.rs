//! Generalized martingale difference divergence (GMDD) and pivotal χ² tests
//! of conditional mean independence and regression specification, with
//! wild-bootstrap integrated conditional moment (ICM) tests as baselines.

pub mod bootstrap;
pub mod cli;
pub mod data;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod gmdd;
pub mod kernels;
pub mod linalg;
pub mod output;
mod pairwise;
pub mod rng;
pub mod sim;
pub mod spec_test;
pub mod stats;
pub mod transforms;

pub use error::{Error, Result};
