use super::dist::Innovation;
use super::model::{ArmaGarchParams, MarginalSpec, VarianceStep};
use crate::error::{Error, Result};
use crate::stats::sample_variance;

/// Conditional paths produced by running the recursion over a series.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPaths {
    pub cond_mean: Vec<f64>,
    pub cond_var: Vec<f64>,
    pub std_resid: Vec<f64>,
}

/// Initial conditional variance: the unconditional level when it exists in
/// closed form, the sample variance otherwise.
pub(crate) fn initial_variance(params: &ArmaGarchParams, spec: &MarginalSpec, dist: &Innovation, step: &VarianceStep, series: &[f64]) -> f64 {
    match params.unconditional_level(spec, dist) {
        Some(level) if level.is_finite() && level > 0.0 => step.level_to_variance(level),
        _ => sample_variance(series),
    }
}

/// Runs the recursion, calling `visit(t, mean_t, var_t, eps_t)` for each
/// observation. Stops at the first non-finite or non-positive variance.
#[inline]
fn run<F: FnMut(usize, f64, f64, f64)>(
    params: &ArmaGarchParams,
    step: &VarianceStep,
    init_var: f64,
    series: &[f64],
    mut visit: F,
) -> Result<()> {
    let mut prev_r = params.mu;
    let mut prev_eps = 0.0;
    let mut var = init_var;
    for (t, &r) in series.iter().enumerate() {
        if t > 0 {
            var = step.next(prev_eps, var);
        }
        if !(var.is_finite() && var > 0.0) {
            return Err(Error::NonFinite { index: t });
        }
        let m = params.mu + params.phi * (prev_r - params.mu) + params.theta * prev_eps;
        let eps = r - m;
        if !eps.is_finite() {
            return Err(Error::NonFinite { index: t });
        }
        visit(t, m, var, eps);
        prev_r = r;
        prev_eps = eps;
    }
    Ok(())
}

/// Filters `series` through the model. The parameters must satisfy the
/// family constraints.
pub fn filter(params: &ArmaGarchParams, spec: &MarginalSpec, series: &[f64]) -> Result<FilterPaths> {
    params.validate(spec)?;
    let dist = params.innovation(spec.innovation)?;
    let step = VarianceStep::new(params, spec, &dist);
    let init = initial_variance(params, spec, &dist, &step, series);
    let n = series.len();
    let mut out = FilterPaths {
        cond_mean: Vec::with_capacity(n),
        cond_var: Vec::with_capacity(n),
        std_resid: Vec::with_capacity(n),
    };
    run(params, &step, init, series, |_, m, v, e| {
        out.cond_mean.push(m);
        out.cond_var.push(v);
        out.std_resid.push(e / v.sqrt());
    })?;
    Ok(out)
}

/// Gaussian-free log-likelihood `sum ln f(z_t) - 0.5 ln s2_t` under the
/// model's innovation law. Returns `-inf` on recursion failure.
pub fn log_likelihood(params: &ArmaGarchParams, spec: &MarginalSpec, series: &[f64]) -> f64 {
    let Ok(dist) = params.innovation(spec.innovation) else {
        return f64::NEG_INFINITY;
    };
    log_likelihood_with(params, spec, &dist, series)
}

pub(crate) fn log_likelihood_with(params: &ArmaGarchParams, spec: &MarginalSpec, dist: &Innovation, series: &[f64]) -> f64 {
    let step = VarianceStep::new(params, spec, dist);
    let init = initial_variance(params, spec, dist, &step, series);
    let mut ll = 0.0;
    let ok = run(params, &step, init, series, |_, _, v, e| {
        ll += dist.ln_pdf(e / v.sqrt()) - 0.5 * v.ln();
    });
    match ok {
        Ok(()) if ll.is_finite() => ll,
        _ => f64::NEG_INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginals::dist::InnovationKind;
    use crate::marginals::model::GarchFamily;
    use approx::assert_abs_diff_eq;

    fn garch_normal() -> MarginalSpec {
        MarginalSpec::new(GarchFamily::Garch, InnovationKind::Normal)
    }

    #[test]
    fn constant_variance_case() {
        let p = ArmaGarchParams::garch(0.25, 0.0, 0.0);
        let r = [0.5, -1.0, 2.0, 0.1];
        let f = filter(&p, &garch_normal(), &r).unwrap();
        assert!(f.cond_var.iter().all(|&v| v == 0.25));
        for (z, x) in f.std_resid.iter().zip(&r) {
            assert_abs_diff_eq!(*z, x / 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn three_step_recursion_matches_hand_computation() {
        // r = (1, -1, 2), omega = 0.1, alpha = 0.2, beta = 0.5, zero mean.
        // s2_0 = 0.1 / 0.3; s2_1 = 0.1 + 0.2 * 1 + 0.5 s2_0; s2_2 = 0.1 + 0.2 * 1 + 0.5 s2_1.
        let p = ArmaGarchParams::garch(0.1, 0.2, 0.5);
        let f = filter(&p, &garch_normal(), &[1.0, -1.0, 2.0]).unwrap();
        let s0 = 0.1 / 0.3;
        let s1 = 0.1 + 0.2 + 0.5 * s0;
        let s2 = 0.1 + 0.2 + 0.5 * s1;
        assert_abs_diff_eq!(f.cond_var[0], s0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.cond_var[1], s1, epsilon = 1e-12);
        assert_abs_diff_eq!(f.cond_var[2], s2, epsilon = 1e-12);
        assert_abs_diff_eq!(f.std_resid[2], 2.0 / s2.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn arma_mean_recursion() {
        let p = ArmaGarchParams {
            mu: 0.1,
            phi: 0.5,
            theta: 0.2,
            ..ArmaGarchParams::garch(1.0, 0.0, 0.0)
        };
        let r = [0.3, -0.2];
        let f = filter(&p, &garch_normal(), &r).unwrap();
        assert_abs_diff_eq!(f.cond_mean[0], 0.1);
        // m_1 = 0.1 + 0.5 (0.3 - 0.1) + 0.2 (0.3 - 0.1)
        assert_abs_diff_eq!(f.cond_mean[1], 0.1 + 0.5 * 0.2 + 0.2 * 0.2, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_recursion_reports_index() {
        let p = ArmaGarchParams::garch(0.1, 0.2, 0.5);
        let err = filter(&p, &garch_normal(), &[1.0, f64::INFINITY, 2.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
    }

    #[test]
    fn log_likelihood_matches_gaussian_formula() {
        let p = ArmaGarchParams::garch(0.5, 0.0, 0.0);
        let r = [0.3, -0.1, 0.7];
        let ll = log_likelihood(&p, &garch_normal(), &r);
        let direct: f64 = r
            .iter()
            .map(|x| -0.5 * (2.0 * std::f64::consts::PI * 0.5).ln() - x * x / (2.0 * 0.5))
            .sum();
        assert_abs_diff_eq!(ll, direct, epsilon = 1e-12);
    }
}
