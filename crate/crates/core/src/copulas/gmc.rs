//! Gaussian mixture copula fitted by pseudo-EM.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::pair::clamp_unit;
use crate::numeric::invert_cdf;
use crate::rng::child_rng;
use crate::stats::{norm_cdf, norm_pdf, norm_quantile};
use crate::{Error, Result};

pub const GMC_TOL: f64 = 1e-6;
pub const GMC_MAX_ITER: usize = 200;
pub const GMC_RESTARTS: usize = 5;
const DET_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

impl GaussianMixture {
    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    fn marginal_cdf(&self, k: usize, x: f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * norm_cdf((x - self.means[j][k]) / self.covs[j][(k, k)].sqrt()))
            .sum()
    }

    fn marginal_pdf(&self, k: usize, x: f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let s = self.covs[j][(k, k)].sqrt();
                w * norm_pdf((x - self.means[j][k]) / s) / s
            })
            .sum()
    }

    fn marginal_quantile(&self, k: usize, p: f64, start: f64) -> f64 {
        invert_cdf(|x| self.marginal_cdf(k, x), |x| self.marginal_pdf(k, x), p, start)
    }

    /// Rescales every coordinate so the mixture marginals have mean 0 and
    /// variance 1; the implied copula is unchanged.
    fn standardize(&mut self) {
        for k in 0..self.dim() {
            let m: f64 = self.weights.iter().zip(&self.means).map(|(w, mu)| w * mu[k]).sum();
            let v: f64 = self
                .weights
                .iter()
                .enumerate()
                .map(|(j, w)| w * (self.covs[j][(k, k)] + (self.means[j][k] - m).powi(2)))
                .sum();
            let s = v.sqrt();
            for j in 0..self.n_components() {
                self.means[j][k] = (self.means[j][k] - m) / s;
                for l in 0..self.dim() {
                    self.covs[j][(k, l)] /= s;
                    self.covs[j][(l, k)] /= s;
                }
            }
        }
    }

    pub fn simulate<R: Rng>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let k = self.dim();
        let chols: Vec<DMatrix<f64>> = self
            .covs
            .iter()
            .map(|c| c.clone().cholesky().map(|ch| ch.l()))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Numerical("mixture covariance not positive definite".into()))?;
        let mut out = DMatrix::zeros(n, k);
        let mut z = DVector::zeros(k);
        for i in 0..n {
            let pick: f64 = rng.random();
            let mut acc = 0.0;
            let mut comp = self.n_components() - 1;
            for (j, w) in self.weights.iter().enumerate() {
                acc += w;
                if pick < acc {
                    comp = j;
                    break;
                }
            }
            for zj in z.iter_mut() {
                *zj = rng.sample(StandardNormal);
            }
            let x = &self.means[comp] + &chols[comp] * &z;
            for j in 0..k {
                out[(i, j)] = clamp_unit(self.marginal_cdf(j, x[j]));
            }
        }
        Ok(out)
    }
}

struct Component {
    inv: DMatrix<f64>,
    log_norm: f64,
}

fn prepare(cov: &DMatrix<f64>) -> Option<Component> {
    let ch = cov.clone().cholesky()?;
    let log_det = 2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    if log_det.exp() < DET_FLOOR {
        return None;
    }
    let k = cov.nrows() as f64;
    Some(Component { inv: ch.inverse(), log_norm: -0.5 * (k * (2.0 * PI).ln() + log_det) })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sample_cov(y: &DMatrix<f64>) -> DMatrix<f64> {
    let t = y.nrows() as f64;
    let mean = y.row_mean();
    let c = y - DMatrix::from_fn(y.nrows(), y.ncols(), |_, j| mean[j]);
    c.transpose() * c / t
}

/// One EM step on `y`; returns the new mixture (unstandardized). Collapsed
/// components are re-seeded from a random observation and the sample
/// covariance.
fn em_step<R: Rng>(mix: &GaussianMixture, y: &DMatrix<f64>, rng: &mut R) -> GaussianMixture {
    let (t, k) = (y.nrows(), y.ncols());
    let m = mix.n_components();
    let comps: Vec<Option<Component>> = mix.covs.iter().map(prepare).collect();
    let mut resp = DMatrix::zeros(t, m);
    let mut lp = vec![0.0; m];
    for i in 0..t {
        let row: DVector<f64> = y.row(i).transpose();
        for j in 0..m {
            lp[j] = match &comps[j] {
                Some(c) => {
                    let d = &row - &mix.means[j];
                    mix.weights[j].ln() + c.log_norm - 0.5 * (d.transpose() * &c.inv * &d)[(0, 0)]
                }
                None => f64::NEG_INFINITY,
            };
        }
        let lse = log_sum_exp(&lp);
        for j in 0..m {
            resp[(i, j)] = (lp[j] - lse).exp();
        }
    }
    let mut out = mix.clone();
    let pooled = sample_cov(y);
    for j in 0..m {
        let nj: f64 = resp.column(j).sum();
        if nj < k as f64 + 1.0 {
            reseed(&mut out, j, y, &pooled, rng);
            continue;
        }
        let mut mu = DVector::zeros(k);
        for i in 0..t {
            mu += y.row(i).transpose() * resp[(i, j)];
        }
        mu /= nj;
        let mut cov = DMatrix::zeros(k, k);
        for i in 0..t {
            let d = y.row(i).transpose() - &mu;
            cov += &d * d.transpose() * resp[(i, j)];
        }
        cov /= nj;
        out.weights[j] = nj / t as f64;
        out.means[j] = mu;
        out.covs[j] = cov;
        if prepare(&out.covs[j]).is_none() {
            reseed(&mut out, j, y, &pooled, rng);
        }
    }
    let s: f64 = out.weights.iter().sum();
    out.weights.iter_mut().for_each(|w| *w /= s);
    out
}

fn reseed<R: Rng>(mix: &mut GaussianMixture, j: usize, y: &DMatrix<f64>, pooled: &DMatrix<f64>, rng: &mut R) {
    let i = rng.random_range(0..y.nrows());
    mix.means[j] = y.row(i).transpose();
    mix.covs[j] = pooled.clone();
    mix.weights[j] = 1.0 / mix.n_components() as f64;
}

/// Copula log-likelihood of the mixture at latent points `y`.
fn pseudo_loglik(mix: &GaussianMixture, y: &DMatrix<f64>) -> f64 {
    let comps: Vec<Option<Component>> = mix.covs.iter().map(prepare).collect();
    let mut ll = 0.0;
    let mut lp = vec![0.0; mix.n_components()];
    for i in 0..y.nrows() {
        let row: DVector<f64> = y.row(i).transpose();
        for j in 0..mix.n_components() {
            lp[j] = match &comps[j] {
                Some(c) => {
                    let d = &row - &mix.means[j];
                    mix.weights[j].ln() + c.log_norm - 0.5 * (d.transpose() * &c.inv * &d)[(0, 0)]
                }
                None => f64::NEG_INFINITY,
            };
        }
        ll += log_sum_exp(&lp);
        for k in 0..y.ncols() {
            ll -= mix.marginal_pdf(k, y[(i, k)]).ln();
        }
    }
    ll
}

fn map_to_latent(mix: &GaussianMixture, u: &DMatrix<f64>, y: &mut DMatrix<f64>) {
    for k in 0..u.ncols() {
        for i in 0..u.nrows() {
            y[(i, k)] = mix.marginal_quantile(k, u[(i, k)], y[(i, k)]);
        }
    }
}

fn fit_once(u: &DMatrix<f64>, n_comp: usize, seed: u64, restart: u64) -> GaussianMixture {
    let mut rng = child_rng(seed, &[restart]);
    let k = u.ncols();
    let scores = u.map(norm_quantile);
    let pooled = sample_cov(&scores);
    let mut mix = GaussianMixture {
        weights: vec![1.0 / n_comp as f64; n_comp],
        means: (0..n_comp)
            .map(|_| {
                if n_comp == 1 {
                    DVector::zeros(k)
                } else {
                    scores.row(rng.random_range(0..u.nrows())).transpose() * 0.5
                }
            })
            .collect(),
        covs: (0..n_comp)
            .map(|j| &pooled * (0.5 + j as f64 / n_comp as f64))
            .collect(),
        loglik: f64::NEG_INFINITY,
    };
    mix.standardize();
    let mut y = scores.clone();
    map_to_latent(&mix, u, &mut y);
    let mut prev = pseudo_loglik(&mix, &y);
    for _ in 0..GMC_MAX_ITER {
        let mut next = em_step(&mix, &y, &mut rng);
        next.standardize();
        map_to_latent(&next, u, &mut y);
        let ll = pseudo_loglik(&next, &y);
        mix = next;
        let done = prev.is_finite() && ((ll - prev) / prev.abs().max(1e-12)).abs() < GMC_TOL;
        prev = ll;
        if done {
            break;
        }
    }
    mix.loglik = prev;
    mix
}

/// Fits a `n_comp`-component Gaussian mixture copula; best of
/// [`GMC_RESTARTS`] seeded restarts. Components are sorted by decreasing
/// weight.
pub fn fit_gmc(u: &DMatrix<f64>, n_comp: usize, seed: u64) -> Result<GaussianMixture> {
    if n_comp == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    let restarts = if n_comp == 1 { 1 } else { GMC_RESTARTS };
    let mut best: Option<GaussianMixture> = None;
    for r in 0..restarts {
        let m = fit_once(u, n_comp, seed, r as u64);
        if m.loglik.is_finite() && best.as_ref().is_none_or(|b| m.loglik > b.loglik) {
            best = Some(m);
        }
    }
    let mut m = best.ok_or_else(|| Error::Numerical("mixture copula fit failed in every restart".into()))?;
    let mut order: Vec<usize> = (0..m.n_components()).collect();
    order.sort_by(|&a, &b| m.weights[b].total_cmp(&m.weights[a]));
    m = GaussianMixture {
        weights: order.iter().map(|&j| m.weights[j]).collect(),
        means: order.iter().map(|&j| m.means[j].clone()).collect(),
        covs: order.iter().map(|&j| m.covs[j].clone()).collect(),
        loglik: m.loglik,
    };
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copulas::elliptical::{kendall_matrix, simulate_elliptical};
    use crate::rng::rng_from_seed;

    fn gaussian_sample(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.3, 0.6, 1.0, 0.4, 0.3, 0.4, 1.0]);
        let mut rng = rng_from_seed(seed);
        (simulate_elliptical(&r, None, n, &mut rng).unwrap(), r)
    }

    #[test]
    fn single_component_matches_gaussian_dependence() {
        let (u, _) = gaussian_sample(1500, 1);
        let m = fit_gmc(&u, 1, 7).unwrap();
        let sim = m.simulate(8000, &mut rng_from_seed(3)).unwrap();
        let d = (kendall_matrix(&sim) - kendall_matrix(&u)).abs().max();
        assert!(d < 0.03, "{d}");
    }

    #[test]
    fn three_components_reproduce_tau_and_are_deterministic() {
        let (u, _) = gaussian_sample(800, 2);
        let a = fit_gmc(&u, 3, 11).unwrap();
        let b = fit_gmc(&u, 3, 11).unwrap();
        assert_eq!(a, b);
        assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.weights.windows(2).all(|w| w[0] >= w[1]));
        let sim = a.simulate(8000, &mut rng_from_seed(4)).unwrap();
        let d = (kendall_matrix(&sim) - kendall_matrix(&u)).abs().max();
        assert!(d < 0.05, "{d}");
    }
}
