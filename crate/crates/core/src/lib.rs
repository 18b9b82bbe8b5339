//! Copula-GARCH market-risk forecasting and model-risk measurement.
//!
//! The crate is organised along the pipeline:
//!
//! * [`data`]: return panels, portfolio weights, rolling windows, synthetic
//!   data-generating processes
//! * [`marginals`]: ARMA-GARCH-family univariate models
//! * [`copulas`]: dependence models on pseudo-observations
//! * [`forecast`]: Monte-Carlo VaR/ES over a model grid and rolling windows
//! * [`backtest`]: VaR and ES backtests and daily candidate masks
//! * [`modelrisk`]: cross-model dispersion measures and HAC inference
//! * [`mcs`]: scoring functions and the model confidence set

pub mod backtest;
pub mod copulas;
pub mod data;
pub mod error;
pub mod forecast;
pub mod marginals;
pub mod mcs;
pub mod modelrisk;
pub mod numeric;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
