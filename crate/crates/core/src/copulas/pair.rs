//! Bivariate copula families used as building blocks for vines, and the
//! Kendall's tau maps of the one-parameter families.
//!
//! `h1(u, v) = P(U <= u | V = v)` and `h2(u, v) = P(V <= v | U = u)`.

use std::f64::consts::PI;

use statrs::function::gamma::{digamma, ln_gamma};

use crate::marginals::{t_cdf, t_quantile};
use crate::numeric::{brent_minimize, brent_root, integrate};
use crate::stats::{kendall_tau, norm_cdf, norm_quantile};
use crate::{Error, Result};

/// Upper bound for Archimedean parameters.
pub const THETA_CAP: f64 = 50.0;
/// Clamp applied to conditional values inside vines and samplers.
pub const UNIT_CLAMP: f64 = 1e-10;

pub(crate) fn clamp_unit(x: f64) -> f64 {
    x.clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairFamily {
    Independence,
    Gaussian,
    StudentT,
    Clayton,
    Gumbel,
    Frank,
    Joe,
}

impl PairFamily {
    pub fn label(self) -> &'static str {
        match self {
            PairFamily::Independence => "indep",
            PairFamily::Gaussian => "gaussian",
            PairFamily::StudentT => "student_t",
            PairFamily::Clayton => "clayton",
            PairFamily::Gumbel => "gumbel",
            PairFamily::Frank => "frank",
            PairFamily::Joe => "joe",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        use PairFamily::*;
        [Independence, Gaussian, StudentT, Clayton, Gumbel, Frank, Joe]
            .into_iter()
            .find(|f| f.label() == s)
    }

    fn n_params(self) -> usize {
        match self {
            PairFamily::Independence => 0,
            PairFamily::StudentT => 2,
            _ => 1,
        }
    }

    fn rotatable(self) -> bool {
        matches!(self, PairFamily::Clayton | PairFamily::Gumbel | PairFamily::Joe)
    }
}

/// A bivariate copula, possibly rotated by 90, 180 or 270 degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCopula {
    pub family: PairFamily,
    pub rotation: u16,
    /// Correlation for gaussian/t, theta for Archimedean families.
    pub par: f64,
    /// Degrees of freedom for the t family, otherwise unused.
    pub par2: f64,
}

impl PairCopula {
    pub fn independence() -> Self {
        Self { family: PairFamily::Independence, rotation: 0, par: 0.0, par2: 0.0 }
    }

    pub fn new(family: PairFamily, rotation: u16, par: f64, par2: f64) -> Result<Self> {
        let c = Self { family, rotation, par, par2 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if ![0, 90, 180, 270].contains(&self.rotation) || (self.rotation != 0 && !self.family.rotatable() && self.family != PairFamily::Independence) {
            return Err(Error::invalid(format!("rotation {} not allowed for {}", self.rotation, self.family.label())));
        }
        let ok = match self.family {
            PairFamily::Independence => true,
            PairFamily::Gaussian => self.par.abs() < 1.0,
            PairFamily::StudentT => self.par.abs() < 1.0 && self.par2 > 2.0,
            PairFamily::Clayton => self.par > 0.0,
            PairFamily::Gumbel | PairFamily::Joe => self.par >= 1.0,
            PairFamily::Frank => self.par != 0.0 && self.par.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("{} parameter out of range: {}", self.family.label(), self.par)))
        }
    }

    pub fn n_params(&self) -> usize {
        self.family.n_params()
    }

    pub fn tau(&self) -> f64 {
        let t = match self.family {
            PairFamily::Independence => 0.0,
            PairFamily::Gaussian | PairFamily::StudentT => 2.0 / PI * self.par.asin(),
            PairFamily::Clayton => clayton_tau(self.par),
            PairFamily::Gumbel => gumbel_tau(self.par),
            PairFamily::Frank => frank_tau(self.par),
            PairFamily::Joe => joe_tau(self.par),
        };
        if self.rotation == 90 || self.rotation == 270 {
            -t
        } else {
            t
        }
    }

    pub fn ln_pdf(&self, u: f64, v: f64) -> f64 {
        let (a, b) = match self.rotation {
            90 => (1.0 - u, v),
            180 => (1.0 - u, 1.0 - v),
            270 => (u, 1.0 - v),
            _ => (u, v),
        };
        self.base_ln_pdf(a, b)
    }

    pub fn loglik(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).map(|(&a, &b)| self.ln_pdf(a, b)).sum()
    }

    /// `P(U <= u | V = v)`.
    pub fn h1(&self, u: f64, v: f64) -> f64 {
        clamp_unit(match self.rotation {
            90 => 1.0 - self.base_h(1.0 - u, v),
            180 => 1.0 - self.base_h(1.0 - u, 1.0 - v),
            270 => self.base_h(u, 1.0 - v),
            _ => self.base_h(u, v),
        })
    }

    /// `P(V <= v | U = u)`.
    pub fn h2(&self, u: f64, v: f64) -> f64 {
        clamp_unit(match self.rotation {
            90 => self.base_h(v, 1.0 - u),
            180 => 1.0 - self.base_h(1.0 - v, 1.0 - u),
            270 => 1.0 - self.base_h(1.0 - v, u),
            _ => self.base_h(v, u),
        })
    }

    /// Solves `h1(u, v) = w` for `u`.
    pub fn h1_inv(&self, w: f64, v: f64) -> f64 {
        clamp_unit(match self.rotation {
            90 => 1.0 - self.base_hinv(1.0 - w, v),
            180 => 1.0 - self.base_hinv(1.0 - w, 1.0 - v),
            270 => self.base_hinv(w, 1.0 - v),
            _ => self.base_hinv(w, v),
        })
    }

    /// Solves `h2(u, v) = w` for `v`.
    pub fn h2_inv(&self, w: f64, u: f64) -> f64 {
        clamp_unit(match self.rotation {
            90 => self.base_hinv(w, 1.0 - u),
            180 => 1.0 - self.base_hinv(1.0 - w, 1.0 - u),
            270 => 1.0 - self.base_hinv(1.0 - w, u),
            _ => self.base_hinv(w, u),
        })
    }

    fn base_ln_pdf(&self, u: f64, v: f64) -> f64 {
        let th = self.par;
        match self.family {
            PairFamily::Independence => 0.0,
            PairFamily::Gaussian => {
                let (x, y) = (norm_quantile(u), norm_quantile(v));
                let r2 = th * th;
                -0.5 * (1.0 - r2).ln() - (r2 * (x * x + y * y) - 2.0 * th * x * y) / (2.0 * (1.0 - r2))
            }
            PairFamily::StudentT => {
                let nu = self.par2;
                let (x, y) = (t_quantile(u, nu), t_quantile(v, nu));
                let r2 = th * th;
                let q = (x * x + y * y - 2.0 * th * x * y) / (nu * (1.0 - r2));
                ln_gamma((nu + 2.0) / 2.0) + ln_gamma(nu / 2.0) - 2.0 * ln_gamma((nu + 1.0) / 2.0)
                    - 0.5 * (1.0 - r2).ln()
                    - (nu + 2.0) / 2.0 * q.ln_1p()
                    + (nu + 1.0) / 2.0 * ((x * x / nu).ln_1p() + (y * y / nu).ln_1p())
            }
            PairFamily::Clayton => {
                let s = u.powf(-th) + v.powf(-th) - 1.0;
                (1.0 + th).ln() - (th + 1.0) * (u.ln() + v.ln()) - (2.0 + 1.0 / th) * s.ln()
            }
            PairFamily::Gumbel => {
                let (x, y) = (-u.ln(), -v.ln());
                let a = x.powf(th) + y.powf(th);
                let a1 = a.powf(1.0 / th);
                -a1 - u.ln() - v.ln() + (th - 1.0) * (x.ln() + y.ln()) + (2.0 / th - 2.0) * a.ln()
                    + (1.0 + (th - 1.0) / a1).ln()
            }
            PairFamily::Frank => {
                if th.abs() < 1e-8 {
                    return 0.0;
                }
                let em = (-th).exp_m1();
                let eu = (-th * u).exp_m1();
                let ev = (-th * v).exp_m1();
                let den = em + eu * ev;
                (th * -em).abs().ln() - th * (u + v) - 2.0 * den.abs().ln()
            }
            PairFamily::Joe => {
                let (ub, vb) = (1.0 - u, 1.0 - v);
                let (a, b) = (ub.powf(th), vb.powf(th));
                let s = a + b - a * b;
                (1.0 / th - 2.0) * s.ln() + (th - 1.0) * (ub.ln() + vb.ln()) + (th - 1.0 + s).ln()
            }
        }
    }

    /// Unrotated `P(U <= u | V = v)`; the base families are exchangeable so
    /// the other conditional is `base_h(v, u)`.
    fn base_h(&self, u: f64, v: f64) -> f64 {
        let th = self.par;
        match self.family {
            PairFamily::Independence => u,
            PairFamily::Gaussian => {
                norm_cdf((norm_quantile(u) - th * norm_quantile(v)) / (1.0 - th * th).sqrt())
            }
            PairFamily::StudentT => {
                let nu = self.par2;
                let (x, y) = (t_quantile(u, nu), t_quantile(v, nu));
                let scale = ((nu + y * y) * (1.0 - th * th) / (nu + 1.0)).sqrt();
                t_cdf((x - th * y) / scale, nu + 1.0)
            }
            PairFamily::Clayton => {
                let s = u.powf(-th) + v.powf(-th) - 1.0;
                (-(th + 1.0) * v.ln() - (1.0 + 1.0 / th) * s.ln()).exp()
            }
            PairFamily::Gumbel => {
                let (x, y) = (-u.ln(), -v.ln());
                let a = x.powf(th) + y.powf(th);
                let a1 = a.powf(1.0 / th);
                (-a1 - v.ln() + (th - 1.0) * y.ln() + (1.0 / th - 1.0) * a.ln()).exp()
            }
            PairFamily::Frank => {
                if th.abs() < 1e-8 {
                    return u;
                }
                let em = (-th).exp_m1();
                let eu = (-th * u).exp_m1();
                let ev = (-th * v).exp_m1();
                (ev + 1.0) * eu / (em + eu * ev)
            }
            PairFamily::Joe => {
                let (ub, vb) = (1.0 - u, 1.0 - v);
                let (a, b) = (ub.powf(th), vb.powf(th));
                let s = a + b - a * b;
                s.powf(1.0 / th - 1.0) * vb.powf(th - 1.0) * (1.0 - a)
            }
        }
    }

    fn base_hinv(&self, w: f64, v: f64) -> f64 {
        let th = self.par;
        match self.family {
            PairFamily::Independence => w,
            PairFamily::Gaussian => {
                norm_cdf(norm_quantile(w) * (1.0 - th * th).sqrt() + th * norm_quantile(v))
            }
            PairFamily::StudentT => {
                let nu = self.par2;
                let y = t_quantile(v, nu);
                let scale = ((nu + y * y) * (1.0 - th * th) / (nu + 1.0)).sqrt();
                t_cdf(t_quantile(w, nu + 1.0) * scale + th * y, nu)
            }
            PairFamily::Clayton => {
                let z = (w.ln() + (th + 1.0) * v.ln()) * (-th / (1.0 + th));
                (z.exp() + 1.0 - v.powf(-th)).powf(-1.0 / th)
            }
            PairFamily::Frank => {
                if th.abs() < 1e-8 {
                    return w;
                }
                let em = (-th).exp_m1();
                let ev = (-th * v).exp_m1();
                let x = w * em / (1.0 + ev * (1.0 - w));
                -x.ln_1p() / th
            }
            PairFamily::Gumbel | PairFamily::Joe => {
                let f = |u: f64| self.base_h(u, v) - w;
                brent_root(f, 1e-15, 1.0 - 1e-15, 1e-13).unwrap_or_else(|| {
                    // h is monotone in u but may saturate at the clamp
                    if f(0.5) > 0.0 {
                        UNIT_CLAMP
                    } else {
                        1.0 - UNIT_CLAMP
                    }
                })
            }
        }
    }

    /// Draws `n` pairs by conditional inversion.
    pub fn simulate<R: rand::Rng>(&self, n: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = clamp_unit(rng.random());
            let w: f64 = clamp_unit(rng.random());
            u.push(a);
            v.push(self.h2_inv(w, a));
        }
        (u, v)
    }
}

pub fn clayton_tau(theta: f64) -> f64 {
    theta / (theta + 2.0)
}

pub fn gumbel_tau(theta: f64) -> f64 {
    1.0 - 1.0 / theta
}

/// First Debye function `D1(x) = x^-1 * int_0^x t / (e^t - 1) dt`.
pub fn debye1(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x < 0.0 {
        return debye1(-x) - x / 2.0;
    }
    if x < 1e-3 {
        return 1.0 - x / 4.0 + x * x / 36.0 - x.powi(4) / 3600.0;
    }
    integrate(|t| if t == 0.0 { 1.0 } else { t / t.exp_m1() }, 0.0, x) / x
}

pub fn frank_tau(theta: f64) -> f64 {
    if theta.abs() < 1e-2 {
        let t2 = theta * theta;
        return theta * (1.0 / 9.0 - t2 / 900.0 + t2 * t2 / 52_920.0);
    }
    1.0 - 4.0 / theta * (1.0 - debye1(theta))
}

const ZETA3: f64 = 1.202_056_903_159_594_2;

pub fn joe_tau(theta: f64) -> f64 {
    let d = 2.0 / theta - 1.0;
    if d.abs() < 5e-4 {
        let psi1 = PI * PI / 6.0 - 1.0;
        let psi2 = 2.0 - 2.0 * ZETA3;
        let psi3 = PI.powi(4) / 15.0 - 6.0;
        return 1.0 - 2.0 / theta * (psi1 + psi2 * d / 2.0 + psi3 * d * d / 6.0);
    }
    1.0 + 2.0 / (2.0 - theta) * (digamma(2.0) - digamma(2.0 / theta + 1.0))
}

/// Inverts a family's tau map; the result is clamped to `[lower, THETA_CAP]`
/// (Frank: `[-THETA_CAP, THETA_CAP]`).
pub fn theta_from_tau(family: PairFamily, tau: f64) -> Result<f64> {
    if !tau.is_finite() || tau.abs() > 1.0 {
        return Err(Error::invalid(format!("tau {tau} not in [-1, 1]")));
    }
    let t = tau;
    let theta = match family {
        PairFamily::Gaussian | PairFamily::StudentT => (PI * t / 2.0).sin(),
        PairFamily::Clayton => {
            let lo = 1e-6;
            if t >= 1.0 {
                THETA_CAP
            } else {
                (2.0 * t / (1.0 - t)).clamp(lo, THETA_CAP)
            }
        }
        PairFamily::Gumbel => {
            if t >= 1.0 {
                THETA_CAP
            } else {
                (1.0 / (1.0 - t)).clamp(1.0, THETA_CAP)
            }
        }
        PairFamily::Frank => {
            let tmax = frank_tau(THETA_CAP);
            if t.abs() < 1e-12 {
                1e-8f64.copysign(if t == 0.0 { 1.0 } else { t })
            } else if t >= tmax {
                THETA_CAP
            } else if t <= -tmax {
                -THETA_CAP
            } else {
                let (lo, hi) = if t > 0.0 { (1e-9, THETA_CAP) } else { (-THETA_CAP, -1e-9) };
                brent_root(|th| frank_tau(th) - t, lo, hi, 1e-15)
                    .ok_or_else(|| Error::Numerical(format!("frank tau inversion failed at {t}")))?
            }
        }
        PairFamily::Joe => {
            let tmax = joe_tau(THETA_CAP);
            if t <= 0.0 {
                1.0
            } else if t >= tmax {
                THETA_CAP
            } else {
                brent_root(|th| joe_tau(th) - t, 1.0, THETA_CAP, 1e-15)
                    .ok_or_else(|| Error::Numerical(format!("joe tau inversion failed at {t}")))?
            }
        }
        PairFamily::Independence => 0.0,
    };
    Ok(theta)
}

/// Maximum-likelihood fit of one family (and rotation) to paired
/// pseudo-observations. Returns `None` when the family cannot represent the
/// sign of the empirical dependence.
pub fn fit_pair_family(family: PairFamily, rotation: u16, u: &[f64], v: &[f64], tau: f64) -> Option<PairCopula> {
    let negative_rot = rotation == 90 || rotation == 270;
    if family.rotatable() && (tau < 0.0) != negative_rot && tau != 0.0 {
        return None;
    }
    let make = |par: f64, par2: f64| PairCopula { family, rotation, par, par2 };
    let nll = |c: PairCopula| {
        let ll = c.loglik(u, v);
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    let c = match family {
        PairFamily::Independence => PairCopula::independence(),
        PairFamily::Gaussian => {
            let (r, _) = brent_minimize(|r| nll(make(r, 0.0)), -0.999, 0.999, 1e-8, 200);
            make(r, 0.0)
        }
        PairFamily::StudentT => {
            let r = (PI * tau / 2.0).sin().clamp(-0.999, 0.999);
            let (nu, _) = brent_minimize(|nu| nll(make(r, nu)), 2.1, 100.0, 1e-4, 100);
            make(r, nu)
        }
        PairFamily::Clayton => {
            let (th, _) = brent_minimize(|th| nll(make(th, 0.0)), 1e-4, THETA_CAP, 1e-8, 200);
            make(th, 0.0)
        }
        PairFamily::Gumbel | PairFamily::Joe => {
            let (th, _) = brent_minimize(|th| nll(make(th, 0.0)), 1.0, THETA_CAP, 1e-8, 200);
            make(th, 0.0)
        }
        PairFamily::Frank => {
            let (lo, hi) = if tau >= 0.0 { (1e-6, THETA_CAP) } else { (-THETA_CAP, -1e-6) };
            let (th, _) = brent_minimize(|th| nll(make(th, 0.0)), lo, hi, 1e-8, 200);
            make(th, 0.0)
        }
    };
    Some(c)
}

/// Candidate set for vine edges: gaussian, t, frank, and clayton/gumbel/joe
/// with all four rotations.
pub fn candidate_families() -> Vec<(PairFamily, u16)> {
    let mut out = vec![(PairFamily::Gaussian, 0), (PairFamily::StudentT, 0), (PairFamily::Frank, 0)];
    for f in [PairFamily::Clayton, PairFamily::Gumbel, PairFamily::Joe] {
        for r in [0, 90, 180, 270] {
            out.push((f, r));
        }
    }
    out
}

/// Fits every candidate and returns the one with minimum AIC, with its
/// log-likelihood.
pub fn select_pair(u: &[f64], v: &[f64]) -> (PairCopula, f64) {
    let tau = kendall_tau(u, v);
    let mut best: Option<(PairCopula, f64, f64)> = None;
    for (fam, rot) in candidate_families() {
        let Some(c) = fit_pair_family(fam, rot, u, v, tau) else { continue };
        let ll = c.loglik(u, v);
        if !ll.is_finite() {
            continue;
        }
        let aic = -2.0 * ll + 2.0 * c.n_params() as f64;
        if best.as_ref().is_none_or(|b| aic < b.2) {
            best = Some((c, ll, aic));
        }
    }
    best.map(|(c, ll, _)| (c, ll)).unwrap_or((PairCopula::independence(), 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn families() -> Vec<PairCopula> {
        let mut v = vec![
            PairCopula::new(PairFamily::Gaussian, 0, 0.6, 0.0).unwrap(),
            PairCopula::new(PairFamily::Gaussian, 0, -0.4, 0.0).unwrap(),
            PairCopula::new(PairFamily::StudentT, 0, 0.5, 5.0).unwrap(),
            PairCopula::new(PairFamily::Frank, 0, 4.0, 0.0).unwrap(),
            PairCopula::new(PairFamily::Frank, 0, -3.0, 0.0).unwrap(),
        ];
        for f in [PairFamily::Clayton, PairFamily::Gumbel, PairFamily::Joe] {
            for r in [0, 90, 180, 270] {
                v.push(PairCopula::new(f, r, 2.5, 0.0).unwrap());
            }
        }
        v
    }

    #[test]
    fn h_functions_are_derivatives_of_the_density() {
        // d/du h1(u, v) = c(u, v)
        for c in families() {
            for &(u, v) in &[(0.3, 0.6), (0.8, 0.2), (0.55, 0.45)] {
                let e = 1e-5;
                let d1 = (c.h1(u + e, v) - c.h1(u - e, v)) / (2.0 * e);
                let d2 = (c.h2(u, v + e) - c.h2(u, v - e)) / (2.0 * e);
                let dens = c.ln_pdf(u, v).exp();
                assert!((d1 - dens).abs() < 1e-5 * dens.max(1.0), "{c:?} h1 {d1} vs {dens}");
                assert!((d2 - dens).abs() < 1e-5 * dens.max(1.0), "{c:?} h2 {d2} vs {dens}");
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        for c in families() {
            let total = integrate(|u| integrate(|v| c.ln_pdf(u, v).exp(), 0.0, 1.0), 0.0, 1.0);
            assert!((total - 1.0).abs() < 1e-3, "{c:?}: {total}");
        }
    }

    #[test]
    fn h_inverses_round_trip() {
        for c in families() {
            for &(w, x) in &[(0.1, 0.7), (0.5, 0.5), (0.93, 0.04)] {
                let u = c.h1_inv(w, x);
                assert!((c.h1(u, x) - w).abs() < 1e-8, "{c:?} h1");
                let v = c.h2_inv(w, x);
                assert!((c.h2(x, v) - w).abs() < 1e-8, "{c:?} h2");
            }
        }
    }

    #[test]
    fn sampled_tau_matches_theory() {
        let mut rng = rng_from_seed(11);
        for c in families() {
            let (u, v) = c.simulate(4000, &mut rng);
            let t = kendall_tau(&u, &v);
            assert!((t - c.tau()).abs() < 0.04, "{c:?}: {t} vs {}", c.tau());
        }
    }

    #[test]
    fn frank_tau_series_joins_quadrature() {
        let th: f64 = 0.01;
        let quad = 1.0 - 4.0 / th * (1.0 - debye1(th));
        assert!((frank_tau(th * (1.0 - 1e-12)) - quad).abs() < 1e-11);
    }

    #[test]
    fn joe_tau_matches_series() {
        // tau = 1 - 4 sum_k 1 / (k (theta k + 2) (theta (k - 1) + 2)), with
        // the tail of the sum approximated by its integral
        for th in [1.0, 1.5, 1.9996, 2.0, 2.0003, 3.0, 7.0] {
            let n = 200_000;
            let mut s = 0.0;
            for k in (1..=n).rev() {
                let k = k as f64;
                s += 1.0 / (k * (th * k + 2.0) * (th * (k - 1.0) + 2.0));
            }
            s += 1.0 / (2.0 * th * th * (n as f64 + 0.5).powi(2));
            let series = 1.0 - 4.0 * s;
            assert!((joe_tau(th) - series).abs() < 1e-11, "{th}: {} vs {series}", joe_tau(th));
        }
    }

    #[test]
    fn select_pair_prefers_true_family() {
        let mut rng = rng_from_seed(5);
        let truth = PairCopula::new(PairFamily::Clayton, 0, 3.0, 0.0).unwrap();
        let (u, v) = truth.simulate(2000, &mut rng);
        let (fit, _) = select_pair(&u, &v);
        assert_eq!(fit.family, PairFamily::Clayton);
        assert_eq!(fit.rotation, 0);
        assert!((fit.par - 3.0).abs() < 0.4);
    }
}
