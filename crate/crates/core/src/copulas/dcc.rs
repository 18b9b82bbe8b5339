//! Dynamic conditional correlation with multivariate-t innovations.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use super::elliptical::NU_RANGE;
use crate::numeric::{brent_minimize, nelder_mead, SimplexOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dcc {
    pub a: f64,
    pub b: f64,
    pub nu: f64,
    /// Unconditional second-moment target.
    pub qbar: DMatrix<f64>,
    /// Last in-sample `Q_T`.
    pub q_last: DMatrix<f64>,
    /// One-step-ahead correlation `R_{T+1}`.
    pub r_next: DMatrix<f64>,
    pub loglik: f64,
}

impl Dcc {
    /// Unit-variance multivariate-t innovations with correlation `R_{T+1}`.
    pub fn simulate_innovations<R: rand::Rng>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        super::elliptical::simulate_t_innovations(&self.r_next, self.nu, n, rng)
    }
}

fn normalize(q: &DMatrix<f64>) -> DMatrix<f64> {
    let d: Vec<f64> = q.diagonal().iter().map(|x| x.sqrt()).collect();
    let mut r = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] / (d[i] * d[j]));
    r.fill_diagonal(1.0);
    r
}

fn update(qbar: &DMatrix<f64>, q: &DMatrix<f64>, z: &DVector<f64>, a: f64, b: f64) -> DMatrix<f64> {
    qbar * (1.0 - a - b) + z * z.transpose() * a + q * b
}

/// Per-period log-determinant and quadratic form `z' R_t^-1 z`; also the
/// final `Q_T`.
fn correlation_path(z: &[DVector<f64>], qbar: &DMatrix<f64>, a: f64, b: f64) -> Option<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
    let mut q = qbar.clone();
    let mut log_dets = Vec::with_capacity(z.len());
    let mut quads = Vec::with_capacity(z.len());
    for (t, zt) in z.iter().enumerate() {
        if t > 0 {
            q = update(qbar, &q, &z[t - 1], a, b);
        }
        let r = normalize(&q);
        let ch = r.cholesky()?;
        let log_det = 2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let sol = ch.solve(zt);
        log_dets.push(log_det);
        quads.push(zt.dot(&sol));
    }
    Some((log_dets, quads, q))
}

/// Log-likelihood of standardized multivariate t (unit variances) with
/// correlation path given by `log_dets`/`quads`.
fn t_loglik(log_dets: &[f64], quads: &[f64], k: usize, nu: f64) -> f64 {
    let kf = k as f64;
    let c = ln_gamma((nu + kf) / 2.0) - ln_gamma(nu / 2.0) - kf / 2.0 * ((nu - 2.0) * PI).ln();
    log_dets
        .iter()
        .zip(quads)
        .map(|(ld, q)| c - 0.5 * ld - (nu + kf) / 2.0 * (q / (nu - 2.0)).ln_1p())
        .sum()
}

fn profile_nu(log_dets: &[f64], quads: &[f64], k: usize) -> (f64, f64) {
    let (nu, nll) = brent_minimize(|nu| -t_loglik(log_dets, quads, k, nu), NU_RANGE.0, NU_RANGE.1, 1e-4, 100);
    (nu, -nll)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

const PERSISTENCE_CAP: f64 = 0.999;

/// `(a, b)` from unconstrained coordinates: persistence `a + b` and the
/// share of `a` in it, both through logistic maps.
fn decode(x: &[f64]) -> (f64, f64) {
    let s = PERSISTENCE_CAP * logistic(x[0]);
    let share = logistic(x[1]);
    (s * share, s * (1.0 - share))
}

fn encode(a: f64, b: f64) -> Vec<f64> {
    let s = a + b;
    vec![logit(s / PERSISTENCE_CAP), logit(a / s)]
}

/// Fits the DCC model to standardized residuals `z` (T x K) by maximum
/// likelihood over `(a, b)` with the t degrees of freedom profiled.
pub fn fit_dcc(z: &DMatrix<f64>) -> Result<Dcc> {
    let (t, k) = (z.nrows(), z.ncols());
    if k < 2 {
        return Err(Error::invalid("DCC needs at least two series"));
    }
    if t < 100 {
        return Err(Error::TooShort { need: 100, got: t });
    }
    let rows: Vec<DVector<f64>> = (0..t).map(|i| z.row(i).transpose()).collect();
    let qbar = z.transpose() * z / t as f64;
    let nll = |x: &[f64]| {
        let (a, b) = decode(x);
        match correlation_path(&rows, &qbar, a, b) {
            Some((ld, q, _)) => -profile_nu(&ld, &q, k).1,
            None => f64::INFINITY,
        }
    };
    let opts = SimplexOptions { f_tol: 1e-9, x_tol: 1e-4, max_iter: 300, initial_step: 0.5 };
    let starts = [encode(0.05, 0.90), encode(0.02, 0.5)];
    let best = starts
        .iter()
        .map(|s| nelder_mead(nll, s, &opts))
        .min_by(|x, y| x.value.total_cmp(&y.value))
        .expect("two starts");
    if !best.value.is_finite() {
        return Err(Error::Numerical("DCC likelihood not finite at any start".into()));
    }
    let (a, b) = decode(&best.x);
    let (ld, q, q_last) = correlation_path(&rows, &qbar, a, b)
        .ok_or_else(|| Error::Numerical("DCC correlation path not positive definite".into()))?;
    let (nu, loglik) = profile_nu(&ld, &q, k);
    let q_next = update(&qbar, &q_last, &rows[t - 1], a, b);
    Ok(Dcc { a, b, nu, qbar, q_last, r_next: normalize(&q_next), loglik })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn codec_round_trips() {
        let (a, b) = decode(&encode(0.07, 0.85));
        assert!((a - 0.07).abs() < 1e-12 && (b - 0.85).abs() < 1e-12);
    }

    #[test]
    fn constant_correlation_limit() {
        let mut rng = rng_from_seed(21);
        let t = 1500;
        let rho: f64 = 0.5;
        let z = DMatrix::from_fn(t, 2, |_, _| 0.0);
        let mut z = z;
        for i in 0..t {
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            z[(i, 0)] = e1;
            z[(i, 1)] = rho * e1 + (1.0 - rho * rho).sqrt() * e2;
        }
        let fit = fit_dcc(&z).unwrap();
        assert!(fit.a < 0.05, "{fit:?}");
        assert!((fit.r_next[(0, 1)] - rho).abs() < 0.1);
        assert!(fit.nu > 15.0);
        assert!(fit.a + fit.b < 1.0);
    }

    #[test]
    fn rejects_single_series() {
        let z = DMatrix::from_element(200, 1, 0.1);
        assert!(fit_dcc(&z).is_err());
    }
}
