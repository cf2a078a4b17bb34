//! Deep-network estimators for the conditional mean of nonlinear
//! autoregressive time series, together with the simulators, baseline
//! regressors, Monte Carlo benchmark and rate calculators used to study them.
//!
//! Module map:
//!
//! * [`net`] feedforward ReLU/sigmoid networks, flat parameter vectors and
//!   backpropagation.
//! * [`penalty`] the clipped-L1 sparsity penalty and its tuning grids.
//! * [`train`] Adam, early stopping and the non-penalized / sparse-penalized
//!   fitting procedures.
//! * [`dgp`] nonlinear AR simulators, lag embedding and stability checks.
//! * [`baselines`] kernel ridge, k-nearest-neighbour and random-forest
//!   regressors.
//! * [`bench`] Monte Carlo replications and CSV/JSON reports.
//! * [`theory`] covering-number bounds, minimax rates and the explicit
//!   step-approximating network.

// Range checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod dgp;
mod error;
pub mod net;
pub mod penalty;
pub mod quadrature;
mod regressor;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use regressor::{FnRegressor, Regressor};
