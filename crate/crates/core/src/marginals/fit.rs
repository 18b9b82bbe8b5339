//! Maximum-likelihood estimation.
//!
//! Parameters are optimised in an unconstrained space; the map back to model
//! parameters enforces positivity and stationarity by construction:
//!
//! * `phi, theta = 0.99 tanh(x)`
//! * persistence `P = 0.9999 logistic(x)`, split between the ARCH and GARCH
//!   terms by logistic (or softmax, for GJR) shares
//! * `omega = scale^power (1 - P) exp(x)`, so `x` is the log of the
//!   unconditional level relative to the sample scale
//! * EGARCH: `beta = 0.9999 tanh(x)`, `omega = (1 - beta)(ln s2 + x)`
//! * `gamma = 0.99 tanh(x)` (TGARCH/APARCH), `delta = 0.2 + 1.8 logistic(x)`
//! * `nu = 2.1 + 97.9 logistic(x)` (t, skew-t), `xi = exp(2 tanh(x))`,
//!   GED shape `0.5 + 9.5 logistic(x)`

use nalgebra::DMatrix;

use super::dist::{Innovation, InnovationKind};
use super::filter::{filter, log_likelihood, log_likelihood_with};
use super::model::{ArmaGarchParams, GarchFamily, MarginalSpec};
use crate::error::{Error, Result};
use crate::numeric::{nelder_mead, SimplexOptions};
use crate::stats::{mean, sample_variance};

pub const MIN_FIT_LENGTH: usize = 100;
pub const PIT_CLAMP: f64 = 1e-10;
const MAX_PERSISTENCE: f64 = 0.9999;

/// A fitted marginal model together with its in-sample paths.
#[derive(Debug, Clone)]
pub struct FittedMarginal {
    pub spec: MarginalSpec,
    pub params: ArmaGarchParams,
    pub cond_mean: Vec<f64>,
    pub cond_var: Vec<f64>,
    pub std_resid: Vec<f64>,
    pub pit: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    pub last_return: f64,
}

impl FittedMarginal {
    /// Assembles a fitted model from given parameters by filtering `series`.
    pub fn from_params(spec: MarginalSpec, params: ArmaGarchParams, series: &[f64], converged: bool) -> Result<Self> {
        let paths = filter(&params, &spec, series)?;
        let dist = params.innovation(spec.innovation)?;
        let loglik = log_likelihood_with(&params, &spec, &dist, series);
        let pit = paths
            .std_resid
            .iter()
            .map(|&z| dist.cdf(z).clamp(PIT_CLAMP, 1.0 - PIT_CLAMP))
            .collect();
        Ok(Self {
            spec,
            params,
            cond_mean: paths.cond_mean,
            cond_var: paths.cond_var,
            std_resid: paths.std_resid,
            pit,
            loglik,
            aic: 2.0 * spec.n_params() as f64 - 2.0 * loglik,
            converged,
            last_return: *series.last().unwrap_or(&0.0),
        })
    }

    pub fn innovation(&self) -> Innovation {
        self.params
            .innovation(self.spec.innovation)
            .expect("fitted parameters are validated")
    }

    pub fn len(&self) -> usize {
        self.cond_var.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cond_var.is_empty()
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

#[inline]
fn atanh_clamped(x: f64) -> f64 {
    x.clamp(-0.999_999, 0.999_999).atanh()
}

/// Maps between unconstrained optimiser coordinates and model parameters.
struct Codec {
    spec: MarginalSpec,
    scale: f64,
    ln_var: f64,
}

impl Codec {
    fn new(spec: MarginalSpec, series: &[f64]) -> Self {
        let var = sample_variance(series);
        Self {
            spec,
            scale: var.sqrt(),
            ln_var: var.ln(),
        }
    }

    fn dim(&self) -> usize {
        self.spec.n_params()
    }

    fn decode(&self, x: &[f64]) -> Option<(ArmaGarchParams, Innovation)> {
        let mut p = ArmaGarchParams {
            mu: self.scale * x[0],
            phi: 0.99 * x[1].tanh(),
            theta: 0.99 * x[2].tanh(),
            ..Default::default()
        };
        let nv = self.spec.family.n_variance_params();
        let v = &x[3..3 + nv];
        let shape = &x[3 + nv..];
        match self.spec.innovation {
            InnovationKind::Normal => {}
            InnovationKind::StudentT => p.nu = 2.1 + 97.9 * logistic(shape[0]),
            InnovationKind::SkewT => {
                p.nu = 2.1 + 97.9 * logistic(shape[0]);
                p.xi = (2.0 * shape[1].tanh()).exp();
            }
            InnovationKind::Ged => p.nu = 0.5 + 9.5 * logistic(shape[0]),
        }
        let dist = p.innovation(self.spec.innovation).ok()?;
        match self.spec.family {
            GarchFamily::Garch => {
                let pers = MAX_PERSISTENCE * logistic(v[1]);
                let share = logistic(v[2]);
                p.alpha = pers * share;
                p.beta = pers * (1.0 - share);
                p.omega = self.scale.powi(2) * (1.0 - pers) * v[0].exp();
            }
            GarchFamily::Gjr => {
                let pers = MAX_PERSISTENCE * logistic(v[1]);
                let (ea, eg) = (v[2].exp(), v[3].exp());
                let total = ea + eg + 1.0;
                let kappa = dist.prob_negative();
                p.alpha = pers * ea / total;
                p.gamma = pers * eg / total / kappa;
                p.beta = pers / total;
                p.omega = self.scale.powi(2) * (1.0 - pers) * v[0].exp();
            }
            GarchFamily::Egarch => {
                p.alpha = v[1];
                p.gamma = v[2];
                p.beta = MAX_PERSISTENCE * v[3].tanh();
                p.omega = (1.0 - p.beta) * (self.ln_var + v[0]);
            }
            GarchFamily::Tgarch | GarchFamily::Aparch => {
                p.gamma = 0.99 * v[3].tanh();
                let power = if self.spec.family == GarchFamily::Aparch {
                    p.delta = 0.2 + 1.8 * logistic(v[4]);
                    p.delta
                } else {
                    p.delta = 1.0;
                    1.0
                };
                let kappa = dist.asym_power_moment(p.gamma, power);
                let pers = MAX_PERSISTENCE * logistic(v[1]);
                let share = logistic(v[2]);
                p.alpha = pers * share / kappa;
                p.beta = pers * (1.0 - share);
                p.omega = self.scale.powf(power) * (1.0 - pers) * v[0].exp();
            }
        }
        Some((p, dist))
    }

    fn encode(&self, p: &ArmaGarchParams) -> Vec<f64> {
        let mut x = vec![p.mu / self.scale, atanh_clamped(p.phi / 0.99), atanh_clamped(p.theta / 0.99)];
        let dist = p.innovation(self.spec.innovation).unwrap_or(Innovation::Normal);
        match self.spec.family {
            GarchFamily::Garch => {
                let pers = (p.alpha + p.beta).clamp(1e-6, MAX_PERSISTENCE * 0.999_999);
                x.push((p.omega / (self.scale.powi(2) * (1.0 - pers))).ln());
                x.push(logit(pers / MAX_PERSISTENCE));
                x.push(logit(p.alpha / pers));
            }
            GarchFamily::Gjr => {
                let kappa = dist.prob_negative();
                let g = p.gamma * kappa;
                let pers = (p.alpha + p.beta + g).clamp(1e-6, MAX_PERSISTENCE * 0.999_999);
                x.push((p.omega / (self.scale.powi(2) * (1.0 - pers))).ln());
                x.push(logit(pers / MAX_PERSISTENCE));
                let b = p.beta.max(1e-9);
                x.push((p.alpha.max(1e-9) / b).ln());
                x.push((g.max(1e-9) / b).ln());
            }
            GarchFamily::Egarch => {
                let beta = p.beta.clamp(-0.999_999 * MAX_PERSISTENCE, 0.999_999 * MAX_PERSISTENCE);
                x.push(p.omega / (1.0 - beta) - self.ln_var);
                x.push(p.alpha);
                x.push(p.gamma);
                x.push(atanh_clamped(beta / MAX_PERSISTENCE));
            }
            GarchFamily::Tgarch | GarchFamily::Aparch => {
                let power = if self.spec.family == GarchFamily::Aparch { p.delta } else { 1.0 };
                let kappa = dist.asym_power_moment(p.gamma, power);
                let arch = p.alpha * kappa;
                let pers = (arch + p.beta).clamp(1e-6, MAX_PERSISTENCE * 0.999_999);
                x.push((p.omega / (self.scale.powf(power) * (1.0 - pers))).ln());
                x.push(logit(pers / MAX_PERSISTENCE));
                x.push(logit(arch / pers));
                x.push(atanh_clamped(p.gamma / 0.99));
                if self.spec.family == GarchFamily::Aparch {
                    x.push(logit((p.delta - 0.2) / 1.8));
                }
            }
        }
        match self.spec.innovation {
            InnovationKind::Normal => {}
            InnovationKind::StudentT => x.push(logit((p.nu - 2.1) / 97.9)),
            InnovationKind::SkewT => {
                x.push(logit((p.nu - 2.1) / 97.9));
                x.push(atanh_clamped(p.xi.ln() / 2.0));
            }
            InnovationKind::Ged => x.push(logit((p.nu - 0.5) / 9.5)),
        }
        x
    }
}

fn autocorrelation(y: &[f64], lag: usize) -> f64 {
    let m = mean(y);
    let denom: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    if denom == 0.0 || lag >= y.len() {
        return 0.0;
    }
    y.iter()
        .zip(&y[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / denom
}

/// Method-of-moments (persistence, alpha) for a GARCH(1,1) from the first two
/// autocorrelations of squared demeaned returns.
fn moment_seed(series: &[f64]) -> (f64, f64) {
    let m = mean(series);
    let sq: Vec<f64> = series.iter().map(|r| (r - m).powi(2)).collect();
    let (r1, r2) = (autocorrelation(&sq, 1), autocorrelation(&sq, 2));
    let pers = if r1 > 0.02 && r2 > 0.0 { (r2 / r1).clamp(0.5, 0.995) } else { 0.9 };
    let rho1 = |a: f64| {
        let b = pers - a;
        a * (1.0 - a * b - b * b) / (1.0 - 2.0 * a * b - b * b)
    };
    let (mut lo, mut hi) = (0.005, pers - 0.005);
    let alpha = if r1 > rho1(lo) && r1 < rho1(hi) {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if rho1(mid) < r1 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    } else {
        0.05f64.min(pers - 0.01)
    };
    (pers, alpha.clamp(0.01, pers - 0.01))
}

fn seed_params(spec: &MarginalSpec, series: &[f64], pers: f64, alpha: f64) -> ArmaGarchParams {
    let var = sample_variance(series);
    let mut p = ArmaGarchParams {
        mu: mean(series),
        nu: 8.0,
        xi: 1.0,
        ..Default::default()
    };
    if spec.innovation == InnovationKind::Ged {
        p.nu = 1.5;
    }
    let dist = p.innovation(spec.innovation).unwrap_or(Innovation::Normal);
    match spec.family {
        GarchFamily::Garch => {
            p.alpha = alpha;
            p.beta = pers - alpha;
            p.omega = var * (1.0 - pers);
        }
        GarchFamily::Gjr => {
            p.alpha = 0.5 * alpha;
            p.gamma = 0.5 * alpha / dist.prob_negative();
            p.beta = pers - alpha;
            p.omega = var * (1.0 - pers);
        }
        GarchFamily::Egarch => {
            p.beta = pers;
            p.alpha = 0.0;
            p.gamma = (2.0 * alpha).min(0.4);
            p.omega = (1.0 - pers) * var.ln();
        }
        GarchFamily::Tgarch | GarchFamily::Aparch => {
            let power = if spec.family == GarchFamily::Aparch { 1.5 } else { 1.0 };
            p.delta = power;
            p.gamma = 0.0;
            let kappa = dist.asym_power_moment(0.0, power);
            p.alpha = alpha / kappa;
            p.beta = pers - alpha;
            p.omega = var.powf(power / 2.0) * (1.0 - pers);
        }
    }
    p
}

/// Options controlling the optimiser; the defaults follow the documented
/// estimation protocol (3 starts, 500 iterations each, 1e-8 relative
/// tolerance).
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub simplex: SimplexOptions,
    /// Additional simplex restarts from the incumbent once the best start is
    /// selected.
    pub polish_rounds: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            simplex: SimplexOptions {
                f_tol: 1e-8,
                x_tol: 1e-2,
                max_iter: 500,
                initial_step: 0.3,
            },
            polish_rounds: 4,
        }
    }
}

fn validate_series(series: &[f64]) -> Result<()> {
    if series.len() < MIN_FIT_LENGTH {
        return Err(Error::TooShort {
            need: MIN_FIT_LENGTH,
            got: series.len(),
        });
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite return at index {i}")));
    }
    if series.iter().all(|&v| v == series[0]) {
        return Err(Error::invalid("series has zero variance"));
    }
    Ok(())
}

/// Fits `spec` to `series` with default options.
pub fn fit_marginal(series: &[f64], spec: MarginalSpec) -> Result<FittedMarginal> {
    fit_marginal_with(series, spec, &FitOptions::default())
}

pub fn fit_marginal_with(series: &[f64], spec: MarginalSpec, opts: &FitOptions) -> Result<FittedMarginal> {
    validate_series(series)?;
    let codec = Codec::new(spec, series);
    let objective = |x: &[f64]| -> f64 {
        match codec.decode(x) {
            Some((p, dist)) => -log_likelihood_with(&p, &spec, &dist, series),
            None => f64::INFINITY,
        }
    };

    let (pers, alpha) = moment_seed(series);
    let seeds = [
        seed_params(&spec, series, pers, alpha),
        seed_params(&spec, series, 0.98, 0.05),
        seed_params(&spec, series, 0.6, 0.2),
    ];
    let mut best = None::<crate::numeric::SimplexResult>;
    for seed in &seeds {
        let x0 = codec.encode(seed);
        debug_assert_eq!(x0.len(), codec.dim());
        let res = nelder_mead(objective, &x0, &opts.simplex);
        if best.as_ref().is_none_or(|b| res.value < b.value) {
            best = Some(res);
        }
    }
    let mut best = best.expect("at least one start");
    let polish = SimplexOptions {
        initial_step: 0.05,
        ..opts.simplex.clone()
    };
    for _ in 0..opts.polish_rounds {
        let res = nelder_mead(objective, &best.x, &polish);
        let improved = best.value - res.value;
        let done = improved <= opts.simplex.f_tol * best.value.abs().max(1e-10);
        if res.value <= best.value {
            best = res;
        } else {
            best.converged = res.converged;
        }
        if done && best.converged {
            break;
        }
    }
    if !best.value.is_finite() {
        return Err(Error::Numerical(format!("{spec}: no feasible starting point")));
    }
    let (params, _) = codec
        .decode(&best.x)
        .ok_or_else(|| Error::Numerical(format!("{spec}: optimum not decodable")))?;
    FittedMarginal::from_params(spec, params, series, best.converged)
}

/// Asymptotic standard errors from the inverse observed information (central
/// finite-difference Hessian of the log-likelihood in the model's own
/// parameters). Returned in the order of [`ArmaGarchParams::free`].
pub fn standard_errors(fm: &FittedMarginal, series: &[f64]) -> Result<Vec<(&'static str, f64)>> {
    let free = fm.params.free(&fm.spec);
    let x0: Vec<f64> = free.iter().map(|f| f.1).collect();
    let n = x0.len();
    let h: Vec<f64> = x0.iter().map(|v| 1e-4 * v.abs().max(1e-2)).collect();
    let ll = |x: &[f64]| log_likelihood(&fm.params.with_free(&fm.spec, x), &fm.spec, series);
    let f0 = ll(&x0);
    let mut hess = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = if i == j {
                let mut xp = x0.clone();
                let mut xm = x0.clone();
                xp[i] += h[i];
                xm[i] -= h[i];
                (ll(&xp) - 2.0 * f0 + ll(&xm)) / (h[i] * h[i])
            } else {
                let eval = |si: f64, sj: f64| {
                    let mut x = x0.clone();
                    x[i] += si * h[i];
                    x[j] += sj * h[j];
                    ll(&x)
                };
                (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h[i] * h[j])
            };
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Hessian".into()));
    }
    let info = -hess;
    let cov = info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| info.try_inverse())
        .ok_or_else(|| Error::Numerical("singular information matrix".into()))?;
    Ok(free
        .iter()
        .enumerate()
        .map(|(i, (name, _))| (*name, cov[(i, i)].max(0.0).sqrt()))
        .collect())
}
