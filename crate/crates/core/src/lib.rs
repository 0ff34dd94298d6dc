#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Unbiased partial shrinkage of treatment effects in Gaussian linear
//! regression.
//!
//! The crate estimates `beta` in `Y = 1 alpha + X beta + W gamma + U` by
//! shrinking the control coefficients `gamma` towards zero with a
//! James-Stein-type factor and then re-fitting `beta` on the adjusted
//! outcome. Under exogenous treatment this keeps `beta_hat` unbiased while
//! lowering its prediction-norm risk below least squares once there are at
//! least three controls.
//!
//! - [`model`]: data types and the Gaussian data-generating process
//! - [`canon`]: the nested orthonormal basis, canonical form and group actions
//! - [`estimators`]: OLS (long and short), shrinkage, empirical and generalized Bayes
//! - [`risk`]: losses, Monte Carlo risk with common random numbers, closed-form oracles
//! - [`cli`]: the `shrinkreg` command-line front end

pub mod canon;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod model;
pub mod risk;
pub mod rng;

pub use error::{Error, Result};
