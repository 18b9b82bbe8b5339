//! Gaussian and Student-t copulas with Kendall-based correlation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::pair::clamp_unit;
use crate::marginals::{t_cdf, t_ln_pdf, t_quantile};
use crate::numeric::brent_minimize;
use crate::stats::{kendall_tau, norm_cdf, norm_quantile};
use crate::{Error, Result};

/// Eigenvalue floor used when repairing an indefinite correlation matrix.
pub const EIGEN_FLOOR: f64 = 1e-8;
pub const NU_RANGE: (f64, f64) = (2.1, 100.0);

/// Matrix of pairwise Kendall's tau between the columns of `u`.
pub fn kendall_matrix(u: &DMatrix<f64>) -> DMatrix<f64> {
    let k = u.ncols();
    let cols: Vec<Vec<f64>> = (0..k).map(|j| u.column(j).iter().copied().collect()).collect();
    let mut m = DMatrix::identity(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            let t = kendall_tau(&cols[i], &cols[j]);
            m[(i, j)] = t;
            m[(j, i)] = t;
        }
    }
    m
}

/// Projects a symmetric matrix to a positive-definite correlation matrix by
/// clipping eigenvalues at [`EIGEN_FLOOR`] and rescaling to unit diagonal.
pub fn nearest_pd_correlation(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let out = if eig.eigenvalues.iter().all(|&l| l >= EIGEN_FLOOR) {
        sym
    } else {
        let clipped = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
    };
    let d: Vec<f64> = out.diagonal().iter().map(|x| x.sqrt()).collect();
    if d.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err(Error::Numerical("correlation repair produced a non-positive diagonal".into()));
    }
    let mut r = DMatrix::from_fn(out.nrows(), out.ncols(), |i, j| out[(i, j)] / (d[i] * d[j]));
    r.fill_diagonal(1.0);
    let r = (&r + r.transpose()) * 0.5;
    if r.clone().cholesky().is_none() {
        return Err(Error::Numerical("correlation repair failed".into()));
    }
    Ok(r)
}

/// Correlation from Kendall's tau via `rho = sin(pi tau / 2)`, repaired to PD.
pub fn correlation_from_tau(tau: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut r = tau.map(|t| (PI * t / 2.0).sin());
    r.fill_diagonal(1.0);
    nearest_pd_correlation(&r)
}

struct Factor {
    chol_l: DMatrix<f64>,
    inv: DMatrix<f64>,
    log_det: f64,
}

fn factor(r: &DMatrix<f64>) -> Result<Factor> {
    let ch = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("correlation matrix not positive definite".into()))?;
    let l = ch.l();
    let log_det = 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
    Ok(Factor { inv: ch.inverse(), chol_l: l, log_det })
}

fn quad_form(inv: &DMatrix<f64>, x: &[f64]) -> f64 {
    let k = x.len();
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..k {
            s += x[i] * inv[(i, j)] * x[j];
        }
    }
    s
}

pub fn gaussian_loglik(u: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<f64> {
    let f = factor(r)?;
    let mut ll = 0.0;
    let mut x = vec![0.0; u.ncols()];
    for row in u.row_iter() {
        for (xi, &ui) in x.iter_mut().zip(row.iter()) {
            *xi = norm_quantile(ui);
        }
        let q = quad_form(&f.inv, &x);
        let ss: f64 = x.iter().map(|v| v * v).sum();
        ll += -0.5 * f.log_det - 0.5 * (q - ss);
    }
    Ok(ll)
}

pub fn t_loglik(u: &DMatrix<f64>, r: &DMatrix<f64>, nu: f64) -> Result<f64> {
    let f = factor(r)?;
    Ok(t_loglik_factored(u, &f, nu))
}

fn t_loglik_factored(u: &DMatrix<f64>, f: &Factor, nu: f64) -> f64 {
    let k = u.ncols() as f64;
    let c = ln_gamma((nu + k) / 2.0) - ln_gamma(nu / 2.0) - k / 2.0 * (nu * PI).ln() - 0.5 * f.log_det;
    let mut ll = 0.0;
    let mut x = vec![0.0; u.ncols()];
    for row in u.row_iter() {
        let mut marg = 0.0;
        for (xi, &ui) in x.iter_mut().zip(row.iter()) {
            *xi = t_quantile(ui, nu);
            marg += t_ln_pdf(*xi, nu);
        }
        let q = quad_form(&f.inv, &x);
        ll += c - (nu + k) / 2.0 * (q / nu).ln_1p() - marg;
    }
    ll
}

/// Fits the t copula: correlation from tau, then the degrees of freedom by a
/// one-dimensional profile likelihood. Returns `(R, nu, loglik)`.
pub fn fit_t(u: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64, f64)> {
    let r = correlation_from_tau(&kendall_matrix(u))?;
    let f = factor(&r)?;
    let (nu, nll) = brent_minimize(|nu| -t_loglik_factored(u, &f, nu), NU_RANGE.0, NU_RANGE.1, 1e-3, 100);
    Ok((r, nu, -nll))
}

pub fn fit_gaussian(u: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let r = correlation_from_tau(&kendall_matrix(u))?;
    let ll = gaussian_loglik(u, &r)?;
    Ok((r, ll))
}

/// Draws `n` Gaussian vectors with correlation `r`; with `nu` set they are
/// scaled by an independent chi-square mixing variable (multivariate t).
pub fn simulate_elliptical<R: Rng>(r: &DMatrix<f64>, nu: Option<f64>, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let f = factor(r)?;
    let k = r.nrows();
    let chi = match nu {
        Some(v) => Some(ChiSquared::new(v).map_err(|e| Error::invalid(format!("chi-square({v}): {e}")))?),
        None => None,
    };
    let mut out = DMatrix::zeros(n, k);
    let mut z = DVector::zeros(k);
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        let x = &f.chol_l * &z;
        match (nu, &chi) {
            (Some(v), Some(c)) => {
                let w: f64 = c.sample(rng);
                let s = (v / w).sqrt();
                for j in 0..k {
                    out[(i, j)] = clamp_unit(t_cdf(x[j] * s, v));
                }
            }
            _ => {
                for j in 0..k {
                    out[(i, j)] = clamp_unit(norm_cdf(x[j]));
                }
            }
        }
    }
    Ok(out)
}

/// Multivariate-t draws with correlation `r`, rescaled to unit variances.
pub fn simulate_t_innovations<R: Rng>(r: &DMatrix<f64>, nu: f64, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(nu > 2.0) {
        return Err(Error::invalid(format!("standardized t needs nu > 2, got {nu}")));
    }
    let f = factor(r)?;
    let k = r.nrows();
    let chi = ChiSquared::new(nu).map_err(|e| Error::invalid(format!("chi-square({nu}): {e}")))?;
    let mut out = DMatrix::zeros(n, k);
    let mut z = DVector::zeros(k);
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        let x = &f.chol_l * &z;
        let w: f64 = chi.sample(rng);
        let s = ((nu - 2.0) / w).sqrt();
        for j in 0..k {
            out[(i, j)] = x[j] * s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_pd_repairs_indefinite_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        assert!(m.clone().cholesky().is_none());
        let r = nearest_pd_correlation(&m).unwrap();
        assert!(r.clone().cholesky().is_some());
        for i in 0..3 {
            assert!((r[(i, i)] - 1.0).abs() < 1e-15);
        }
        let e = r.symmetric_eigen().eigenvalues;
        assert!(e.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn nearest_pd_keeps_valid_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let r = nearest_pd_correlation(&m).unwrap();
        assert!((r - m).abs().max() < 1e-15);
    }

    #[test]
    fn gaussian_loglik_of_identity_is_zero() {
        let u = DMatrix::from_row_slice(2, 2, &[0.2, 0.7, 0.5, 0.9]);
        let ll = gaussian_loglik(&u, &DMatrix::identity(2, 2)).unwrap();
        assert!(ll.abs() < 1e-12);
    }

    #[test]
    fn bivariate_density_agrees_with_pair_form() {
        use crate::copulas::pair::{PairCopula, PairFamily};
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.45, 0.45, 1.0]);
        let u = DMatrix::from_row_slice(3, 2, &[0.2, 0.7, 0.5, 0.9, 0.01, 0.3]);
        let g = PairCopula::new(PairFamily::Gaussian, 0, 0.45, 0.0).unwrap();
        let t = PairCopula::new(PairFamily::StudentT, 0, 0.45, 6.0).unwrap();
        let col = |j: usize| u.column(j).iter().copied().collect::<Vec<_>>();
        let (a, b) = (col(0), col(1));
        assert!((gaussian_loglik(&u, &r).unwrap() - g.loglik(&a, &b)).abs() < 1e-10);
        assert!((t_loglik(&u, &r, 6.0).unwrap() - t.loglik(&a, &b)).abs() < 1e-10);
    }
}
