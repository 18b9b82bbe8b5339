//! Univariate ARMA(1,1)-GARCH-family models: the 5 x 4 grid of variance
//! equations and innovation laws, with filtering, estimation and one-step
//! forecasts.

mod dist;
mod filter;
mod fit;
mod forecast;
mod model;

pub use dist::{t_cdf, t_ln_pdf, t_pdf, t_quantile, Innovation, InnovationKind};
pub use filter::{filter, log_likelihood, FilterPaths};
pub use fit::{fit_marginal, fit_marginal_with, standard_errors, FitOptions, FittedMarginal, MIN_FIT_LENGTH, PIT_CLAMP};
pub use forecast::{forecast_h_step_var, forecast_one_step, forecast_univariate_risk, one_step_from, risk_from_moments, simulate_path, OneStep};
pub use model::{ArmaGarchParams, GarchFamily, MarginalSpec};

/// Inverse CDF of a standardized innovation law.
pub fn innovation_quantile(dist: &Innovation, u: f64) -> crate::Result<f64> {
    dist.quantile(u)
}
