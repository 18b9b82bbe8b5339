use super::filter::initial_variance;
use super::fit::FittedMarginal;
use super::model::{ArmaGarchParams, GarchFamily, MarginalSpec, VarianceStep};
use crate::error::{Error, Result};

/// One-day-ahead conditional moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneStep {
    pub mu_next: f64,
    pub sigma2_next: f64,
}

/// One-step forecast from the last in-sample return, residual and variance.
pub fn one_step_from(params: &ArmaGarchParams, spec: &MarginalSpec, last_return: f64, last_eps: f64, last_var: f64) -> Result<OneStep> {
    let dist = params.innovation(spec.innovation)?;
    let step = VarianceStep::new(params, spec, &dist);
    Ok(OneStep {
        mu_next: params.mu + params.phi * (last_return - params.mu) + params.theta * last_eps,
        sigma2_next: step.next(last_eps, last_var),
    })
}

/// One-step forecast for a fitted model. Unconverged fits are refused unless
/// `allow_unconverged` is set.
pub fn forecast_one_step(fm: &FittedMarginal, allow_unconverged: bool) -> Result<OneStep> {
    if !fm.converged && !allow_unconverged {
        return Err(Error::Numerical(format!("{}: fit did not converge", fm.spec)));
    }
    let t = fm.len().checked_sub(1).ok_or_else(|| Error::invalid("empty fitted model"))?;
    let last_var = fm.cond_var[t];
    let last_eps = fm.std_resid[t] * last_var.sqrt();
    one_step_from(&fm.params, &fm.spec, fm.last_return, last_eps, last_var)
}

/// GARCH(1,1) h-step variance `s2 + (alpha + beta)^(h-1) (s2_{t+1} - s2)`
/// with `s2 = omega / (1 - alpha - beta)`.
pub fn forecast_h_step_var(params: &ArmaGarchParams, sigma2_next: f64, h: u32) -> Result<f64> {
    if h == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let pers = params.alpha + params.beta;
    if !(pers < 1.0) || params.omega <= 0.0 || params.alpha < 0.0 || params.beta < 0.0 {
        return Err(Error::NonStationary(format!("alpha + beta = {pers}")));
    }
    let uncond = params.omega / (1.0 - pers);
    Ok(uncond + pers.powi(h as i32 - 1) * (sigma2_next - uncond))
}

/// VaR and ES (both positive losses) of the one-step predictive distribution
/// `mu_next + sigma_next z`.
pub fn forecast_univariate_risk(fm: &FittedMarginal, level: f64) -> Result<(f64, f64)> {
    let next = forecast_one_step(fm, true)?;
    risk_from_moments(&fm.innovation(), next, level)
}

pub fn risk_from_moments(dist: &super::dist::Innovation, next: OneStep, level: f64) -> Result<(f64, f64)> {
    let p = 1.0 - level;
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::invalid(format!("confidence level {level} outside (0.5, 1)")));
    }
    let sigma = next.sigma2_next.max(0.0).sqrt();
    let q = dist.quantile(p)?;
    let tail = dist.tail_mean(p);
    let var = -(next.mu_next + sigma * q);
    let es = -(next.mu_next + sigma * tail);
    Ok((var, es.max(var)))
}

/// Simulates returns from the model driven by the given standardized
/// innovations, starting from the unconditional level (EGARCH: from
/// `exp(omega / (1 - beta))`).
pub fn simulate_path(params: &ArmaGarchParams, spec: &MarginalSpec, innovations: &[f64]) -> Result<Vec<f64>> {
    params.validate(spec)?;
    let dist = params.innovation(spec.innovation)?;
    let step = VarianceStep::new(params, spec, &dist);
    let mut var = match spec.family {
        GarchFamily::Egarch => (params.omega / (1.0 - params.beta)).exp(),
        _ => initial_variance(params, spec, &dist, &step, &[0.0, 1.0]),
    };
    let mut prev_r = params.mu;
    let mut prev_eps = 0.0;
    let mut out = Vec::with_capacity(innovations.len());
    for (t, &z) in innovations.iter().enumerate() {
        if t > 0 {
            var = step.next(prev_eps, var);
        }
        if !(var.is_finite() && var > 0.0) {
            return Err(Error::NonFinite { index: t });
        }
        let m = params.mu + params.phi * (prev_r - params.mu) + params.theta * prev_eps;
        let eps = var.sqrt() * z;
        let r = m + eps;
        out.push(r);
        prev_r = r;
        prev_eps = eps;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginals::dist::{Innovation, InnovationKind};
    use approx::assert_abs_diff_eq;

    fn sgarch() -> MarginalSpec {
        MarginalSpec::new(GarchFamily::Garch, InnovationKind::Normal)
    }

    #[test]
    fn one_step_substitution() {
        // last eps^2 = 4, last s2 = 2, (0.1, 0.2, 0.5) -> 0.1 + 0.8 + 1.0
        let p = ArmaGarchParams::garch(0.1, 0.2, 0.5);
        let f = one_step_from(&p, &sgarch(), 2.0, 2.0, 2.0).unwrap();
        assert_abs_diff_eq!(f.sigma2_next, 1.9, epsilon = 1e-12);
        assert_abs_diff_eq!(f.mu_next, 0.0);
    }

    #[test]
    fn constant_variance_and_constant_mean() {
        let p = ArmaGarchParams {
            mu: 0.01,
            ..ArmaGarchParams::garch(0.3, 0.0, 0.0)
        };
        let f = one_step_from(&p, &sgarch(), 0.5, -0.2, 7.0).unwrap();
        assert_eq!(f.sigma2_next, 0.3);
        assert_eq!(f.mu_next, 0.01);
    }

    #[test]
    fn h_step_formula() {
        let p = ArmaGarchParams::garch(0.1, 0.1, 0.8);
        assert_eq!(forecast_h_step_var(&p, 2.0, 1).unwrap(), 2.0);
        assert_abs_diff_eq!(forecast_h_step_var(&p, 2.0, 3).unwrap(), 1.81, epsilon = 1e-12);
        assert_abs_diff_eq!(forecast_h_step_var(&p, 2.0, 2000).unwrap(), 1.0, epsilon = 1e-12);
        assert!(forecast_h_step_var(&ArmaGarchParams::garch(0.1, 0.5, 0.5), 2.0, 3).is_err());
    }

    #[test]
    fn h_step_moves_monotonically_toward_unconditional_variance() {
        let p = ArmaGarchParams::garch(0.1, 0.1, 0.8);
        for &start in &[0.2, 3.0] {
            let path: Vec<f64> = (1..50).map(|h| forecast_h_step_var(&p, start, h).unwrap()).collect();
            let dist: Vec<f64> = path.iter().map(|v| (v - 1.0).abs()).collect();
            assert!(dist.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn normal_risk_at_99() {
        let (var, es) = risk_from_moments(&Innovation::Normal, OneStep { mu_next: 0.0, sigma2_next: 1.0 }, 0.99).unwrap();
        assert_abs_diff_eq!(var, 2.3263, epsilon = 5e-5);
        assert_abs_diff_eq!(es, 2.6652, epsilon = 5e-5);
    }

    #[test]
    fn degenerate_variance_gives_minus_mean() {
        let (var, es) = risk_from_moments(&Innovation::StudentT { nu: 5.0 }, OneStep { mu_next: 0.02, sigma2_next: 0.0 }, 0.975).unwrap();
        assert_eq!(var, -0.02);
        assert_eq!(es, -0.02);
    }

    #[test]
    fn es_dominates_var_across_laws_and_levels() {
        let laws = [
            Innovation::Normal,
            Innovation::StudentT { nu: 4.0 },
            Innovation::SkewT { nu: 5.0, xi: 0.8 },
            Innovation::Ged { nu: 1.3 },
        ];
        for d in laws {
            for &lvl in &[0.95, 0.975, 0.99, 0.999] {
                let (var, es) = risk_from_moments(&d, OneStep { mu_next: 0.001, sigma2_next: 2e-4 }, lvl).unwrap();
                assert!(es >= var, "{d:?} {lvl}");
            }
        }
    }
}
