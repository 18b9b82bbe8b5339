use rand::Rng;
use rand_distr::StandardNormal;
use riskgrid::marginals::*;
use riskgrid::rng::rng_from_seed;
use riskgrid::stats::{norm_pdf, norm_quantile};

fn garch_norm() -> MarginalSpec {
    MarginalSpec::new(GarchFamily::Garch, InnovationKind::Normal)
}

fn simulate(params: &ArmaGarchParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    simulate_path(params, &garch_norm(), &z).unwrap()
}

#[test]
fn fit_reaches_the_likelihood_of_the_truth() {
    let truth = ArmaGarchParams { mu: 0.02, phi: 0.3, theta: -0.1, ..ArmaGarchParams::garch(0.05, 0.05, 0.90) };
    let (mut a, mut b) = (0.0, 0.0);
    let seeds = 6;
    for seed in 0..seeds {
        let x = simulate(&truth, 2000, seed);
        let fm = fit_marginal(&x, garch_norm()).unwrap();
        assert!(fm.converged, "seed {seed}");
        assert!(fm.loglik >= log_likelihood(&truth, &garch_norm(), &x) - 1e-6, "seed {seed}");
        let se = standard_errors(&fm, &x).unwrap();
        assert!(se.iter().all(|(_, s)| s.is_finite() && *s > 0.0), "{se:?}");
        a += fm.params.alpha / seeds as f64;
        b += fm.params.beta / seeds as f64;
    }
    assert!((a - 0.05).abs() < 0.02, "mean alpha {a}");
    assert!((b - 0.90).abs() < 0.04, "mean beta {b}");
}

#[test]
fn normal_one_step_risk_uses_closed_form_tails() {
    let x = simulate(&ArmaGarchParams::garch(0.05, 0.08, 0.88), 800, 3);
    let fm = fit_marginal(&x, garch_norm()).unwrap();
    let next = forecast_one_step(&fm, false).unwrap();
    let sd = next.sigma2_next.sqrt();
    for level in [0.975, 0.99] {
        let (var, es) = forecast_univariate_risk(&fm, level).unwrap();
        let q = norm_quantile(1.0 - level);
        assert!((var + next.mu_next + sd * q).abs() < 1e-9);
        assert!((es + next.mu_next - sd * norm_pdf(q) / (1.0 - level)).abs() < 1e-9);
        assert!(es > var);
    }
}

#[test]
fn every_grid_specification_fits_a_short_window() {
    let x = simulate(&ArmaGarchParams::garch(0.05, 0.05, 0.90), 500, 99);
    for spec in MarginalSpec::grid() {
        let fm = fit_marginal(&x, spec).unwrap_or_else(|e| panic!("{spec}: {e}"));
        assert!(fm.loglik.is_finite(), "{spec}");
        assert_eq!(fm.len(), 500);
        let paths = filter(&fm.params, &spec, &x).unwrap();
        assert!(paths.cond_var.iter().all(|v| *v > 0.0));
    }
}
