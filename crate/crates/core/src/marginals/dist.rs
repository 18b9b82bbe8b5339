//! Standardized innovation laws (zero mean, unit variance).
//!
//! * `Normal`: standard normal.
//! * `StudentT`: Student-t with `nu > 2` degrees of freedom rescaled by
//!   `sqrt((nu - 2) / nu)`.
//! * `SkewT`: Fernández–Steel skewing of the standardized t with skew `xi > 0`,
//!   re-centred and re-scaled to zero mean and unit variance (the `sstd`
//!   parametrisation). `xi = 1` is exactly the symmetric case.
//! * `Ged`: generalized error distribution with shape `nu > 0`, standardized
//!   via `lambda = sqrt(2^(-2/nu) Γ(1/nu) / Γ(3/nu))`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::numeric::{integrate, invert_cdf};
use crate::stats::{norm_cdf, norm_pdf, norm_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnovationKind {
    Normal,
    StudentT,
    SkewT,
    Ged,
}

impl InnovationKind {
    pub const ALL: [InnovationKind; 4] = [
        InnovationKind::Normal,
        InnovationKind::StudentT,
        InnovationKind::SkewT,
        InnovationKind::Ged,
    ];

    pub fn label(self) -> &'static str {
        match self {
            InnovationKind::Normal => "norm",
            InnovationKind::StudentT => "std",
            InnovationKind::SkewT => "sstd",
            InnovationKind::Ged => "ged",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.label() == s)
    }

    /// Number of shape parameters carried by the law.
    pub fn n_shape(self) -> usize {
        match self {
            InnovationKind::Normal => 0,
            InnovationKind::StudentT | InnovationKind::Ged => 1,
            InnovationKind::SkewT => 2,
        }
    }
}

/// A fully parameterised standardized innovation distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Innovation {
    Normal,
    StudentT { nu: f64 },
    SkewT { nu: f64, xi: f64 },
    Ged { nu: f64 },
}

/// Unit-variance Student-t helper (no skew).
#[derive(Debug, Clone, Copy)]
struct StdT {
    nu: f64,
    scale: f64,
    log_norm: f64,
}

impl StdT {
    fn new(nu: f64) -> Self {
        let scale = ((nu - 2.0) / nu).sqrt();
        let log_norm = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * PI).ln() - scale.ln();
        Self { nu, scale, log_norm }
    }

    fn ln_pdf(&self, z: f64) -> f64 {
        let x = z / self.scale;
        self.log_norm - 0.5 * (self.nu + 1.0) * (x * x / self.nu).ln_1p()
    }

    fn cdf(&self, z: f64) -> f64 {
        t_cdf(z / self.scale, self.nu)
    }

    fn quantile(&self, p: f64) -> f64 {
        t_quantile(p, self.nu) * self.scale
    }

    /// E|z| for the unit-variance t.
    fn abs_mean(&self) -> f64 {
        let nu = self.nu;
        2.0 * (nu - 2.0).sqrt() * (ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0)).exp()
            / (PI.sqrt() * (nu - 1.0))
    }
}

/// CDF of the standard (unscaled) Student-t.
pub fn t_cdf(x: f64, nu: f64) -> f64 {
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(nu / 2.0, 0.5, nu / (nu + x * x));
    if x < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

pub fn t_pdf(x: f64, nu: f64) -> f64 {
    t_ln_pdf(x, nu).exp()
}

pub fn t_ln_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

/// Quantile of the standard Student-t by safeguarded Newton iteration.
pub fn t_quantile(p: f64, nu: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    // Solve in the lower tail and reflect, which keeps the CDF evaluation
    // away from 1 - tiny cancellation.
    if p > 0.5 {
        return -t_quantile(1.0 - p, nu);
    }
    let start = norm_quantile(p);
    invert_cdf(|x| t_cdf(x, nu), |x| t_pdf(x, nu), p, start)
}

impl Innovation {
    pub fn normal() -> Self {
        Innovation::Normal
    }

    pub fn kind(&self) -> InnovationKind {
        match self {
            Innovation::Normal => InnovationKind::Normal,
            Innovation::StudentT { .. } => InnovationKind::StudentT,
            Innovation::SkewT { .. } => InnovationKind::SkewT,
            Innovation::Ged { .. } => InnovationKind::Ged,
        }
    }

    /// Builds the law for `kind` from its shape parameters (`nu`, `xi`);
    /// unused parameters are ignored.
    pub fn from_kind(kind: InnovationKind, nu: f64, xi: f64) -> Result<Self> {
        let d = match kind {
            InnovationKind::Normal => Innovation::Normal,
            InnovationKind::StudentT => Innovation::StudentT { nu },
            InnovationKind::SkewT => Innovation::SkewT { nu, xi },
            InnovationKind::Ged => Innovation::Ged { nu },
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Innovation::Normal => Ok(()),
            Innovation::StudentT { nu } if nu > 2.0 && nu.is_finite() => Ok(()),
            Innovation::SkewT { nu, xi } if nu > 2.0 && nu.is_finite() && xi > 0.0 && xi.is_finite() => Ok(()),
            Innovation::Ged { nu } if nu > 0.0 && nu.is_finite() => Ok(()),
            other => Err(Error::invalid(format!("inadmissible innovation parameters {other:?}"))),
        }
    }

    pub fn nu(&self) -> Option<f64> {
        match *self {
            Innovation::Normal => None,
            Innovation::StudentT { nu } | Innovation::SkewT { nu, .. } | Innovation::Ged { nu } => Some(nu),
        }
    }

    pub fn xi(&self) -> Option<f64> {
        match *self {
            Innovation::SkewT { xi, .. } => Some(xi),
            _ => None,
        }
    }

    /// Mean and standard deviation of the raw Fernández–Steel variable.
    fn skew_moments(nu: f64, xi: f64) -> (f64, f64) {
        let m1 = StdT::new(nu).abs_mean();
        let mean = m1 * (xi - 1.0 / xi);
        let var = (1.0 - m1 * m1) * (xi * xi + 1.0 / (xi * xi)) + 2.0 * m1 * m1 - 1.0;
        (mean, var.sqrt())
    }

    pub fn ln_pdf(&self, z: f64) -> f64 {
        match *self {
            Innovation::Normal => -0.5 * z * z - 0.5 * (2.0 * PI).ln(),
            Innovation::StudentT { nu } => StdT::new(nu).ln_pdf(z),
            Innovation::SkewT { nu, xi } => {
                if xi == 1.0 {
                    return StdT::new(nu).ln_pdf(z);
                }
                let (m, s) = Self::skew_moments(nu, xi);
                let x = m + s * z;
                let g = StdT::new(nu);
                let core = if x >= 0.0 { g.ln_pdf(x / xi) } else { g.ln_pdf(x * xi) };
                core + (2.0 / (xi + 1.0 / xi)).ln() + s.ln()
            }
            Innovation::Ged { nu } => {
                let lambda = ged_lambda(nu);
                nu.ln() - 0.5 * (z / lambda).abs().powf(nu)
                    - lambda.ln()
                    - (1.0 + 1.0 / nu) * 2f64.ln()
                    - ln_gamma(1.0 / nu)
            }
        }
    }

    pub fn pdf(&self, z: f64) -> f64 {
        match *self {
            Innovation::Normal => norm_pdf(z),
            _ => self.ln_pdf(z).exp(),
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match *self {
            Innovation::Normal => norm_cdf(z),
            Innovation::StudentT { nu } => StdT::new(nu).cdf(z),
            Innovation::SkewT { nu, xi } => {
                let g = StdT::new(nu);
                if xi == 1.0 {
                    return g.cdf(z);
                }
                let (m, s) = Self::skew_moments(nu, xi);
                let x = m + s * z;
                let xi2 = xi * xi;
                if x < 0.0 {
                    2.0 / (xi2 + 1.0) * g.cdf(x * xi)
                } else {
                    1.0 - 2.0 * xi2 / (xi2 + 1.0) * g.cdf(-x / xi)
                }
            }
            Innovation::Ged { nu } => {
                let y = 0.5 * (z / ged_lambda(nu)).abs().powf(nu);
                if !y.is_finite() {
                    return if z < 0.0 { 0.0 } else { 1.0 };
                }
                if y == 0.0 {
                    return 0.5;
                }
                if z < 0.0 {
                    0.5 * gamma_ur(1.0 / nu, y)
                } else {
                    0.5 + 0.5 * gamma_lr(1.0 / nu, y)
                }
            }
        }
    }

    /// Inverse CDF. Errors when `u` lies outside the open unit interval.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::invalid(format!("probability {u} outside (0, 1)")));
        }
        Ok(self.quantile_unchecked(u))
    }

    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        match *self {
            Innovation::Normal => norm_quantile(u),
            Innovation::StudentT { nu } => StdT::new(nu).quantile(u),
            Innovation::SkewT { nu, xi } => {
                let g = StdT::new(nu);
                if xi == 1.0 {
                    return g.quantile(u);
                }
                let (m, s) = Self::skew_moments(nu, xi);
                let xi2 = xi * xi;
                let x = if u < 1.0 / (1.0 + xi2) {
                    g.quantile(u * (1.0 + xi2) / 2.0) / xi
                } else {
                    -xi * g.quantile((1.0 - u) * (1.0 + xi2) / (2.0 * xi2))
                };
                (x - m) / s
            }
            Innovation::Ged { .. } => {
                let start = norm_quantile(u);
                invert_cdf(|z| self.cdf(z), |z| self.pdf(z), u, start)
            }
        }
    }

    /// Points where the density is not smooth (used to split quadrature).
    fn kinks(&self) -> Vec<f64> {
        match *self {
            Innovation::SkewT { nu, xi } if xi != 1.0 => {
                let (m, s) = Self::skew_moments(nu, xi);
                vec![-m / s]
            }
            Innovation::Ged { .. } => vec![0.0],
            _ => Vec::new(),
        }
    }

    /// E[g(z)] by quadrature, split at 0 and at density kinks.
    pub fn expect<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        let mut cuts = self.kinks();
        cuts.push(0.0);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let f = |z: f64| g(z) * self.pdf(z);
        let mut total = integrate(f, f64::NEG_INFINITY, cuts[0]);
        for w in cuts.windows(2) {
            total += integrate(f, w[0], w[1]);
        }
        total + integrate(f, *cuts.last().unwrap(), f64::INFINITY)
    }

    /// E|z|.
    pub fn abs_mean(&self) -> f64 {
        match *self {
            Innovation::Normal => (2.0 / PI).sqrt(),
            Innovation::StudentT { nu } => StdT::new(nu).abs_mean(),
            Innovation::Ged { nu } => {
                ged_lambda(nu) * 2f64.powf(1.0 / nu) * (ln_gamma(2.0 / nu) - ln_gamma(1.0 / nu)).exp()
            }
            Innovation::SkewT { .. } => self.expect(f64::abs),
        }
    }

    /// P(z < 0).
    pub fn prob_negative(&self) -> f64 {
        self.cdf(0.0)
    }

    /// E(|z| - gamma z)^delta, the asymmetric power moment used by
    /// power-GARCH recursions.
    pub fn asym_power_moment(&self, gamma: f64, delta: f64) -> f64 {
        let sym = 0.5 * ((1.0 + gamma).powf(delta) + (1.0 - gamma).powf(delta));
        match *self {
            Innovation::Normal => {
                sym * 2f64.powf(delta / 2.0) * (ln_gamma((delta + 1.0) / 2.0)).exp() / PI.sqrt()
            }
            Innovation::StudentT { nu } => {
                sym * (nu - 2.0).powf(delta / 2.0)
                    * (ln_gamma((delta + 1.0) / 2.0) + ln_gamma((nu - delta) / 2.0) - ln_gamma(nu / 2.0)).exp()
                    / PI.sqrt()
            }
            Innovation::Ged { nu } => {
                sym * ged_lambda(nu).powf(delta)
                    * 2f64.powf(delta / nu)
                    * (ln_gamma((delta + 1.0) / nu) - ln_gamma(1.0 / nu)).exp()
            }
            Innovation::SkewT { .. } => self.expect(|z| (z.abs() - gamma * z).powf(delta)),
        }
    }

    /// Lower-tail conditional mean E[z | z <= q_p] with q_p the p-quantile.
    pub fn tail_mean(&self, p: f64) -> f64 {
        let q = self.quantile_unchecked(p);
        match *self {
            Innovation::Normal => -norm_pdf(q) / p,
            _ => {
                let f = |z: f64| z * self.pdf(z);
                let mut cuts: Vec<f64> = self.kinks().into_iter().filter(|&c| c < q).collect();
                cuts.sort_by(f64::total_cmp);
                let mut total = 0.0;
                let mut lower = f64::NEG_INFINITY;
                for c in cuts {
                    total += integrate(f, lower, c);
                    lower = c;
                }
                total += integrate(f, lower, q);
                total / p
            }
        }
    }
}

fn ged_lambda(nu: f64) -> f64 {
    ((-2.0 / nu) * 2f64.ln() + ln_gamma(1.0 / nu) - ln_gamma(3.0 / nu)).exp().sqrt()
}
