//! ARMA(1,1) mean equation with five GARCH-type variance equations.
//!
//! Mean: `m_t = mu + phi (r_{t-1} - mu) + theta eps_{t-1}`, `eps_t = r_t - m_t`,
//! with `r_{-1} = mu` and `eps_{-1} = 0`.
//!
//! Variance recursions (`z = eps / sigma`):
//!
//! | family | recursion | constraints |
//! |--------|-----------|-------------|
//! | GARCH  | `s2_t = omega + alpha eps2 + beta s2` | `omega > 0, alpha, beta >= 0, alpha + beta < 1` |
//! | GJR    | `s2_t = omega + (alpha + gamma 1[eps < 0]) eps2 + beta s2` | `gamma >= 0, alpha + beta + gamma P(z<0) < 1` |
//! | EGARCH | `ln s2_t = omega + alpha z + gamma (|z| - E|z|) + beta ln s2` | `|beta| < 1` |
//! | TGARCH | `s_t = omega + alpha (|eps| - gamma eps) + beta s` | `|gamma| < 1, alpha E(|z| - gamma z) + beta < 1` |
//! | APARCH | `s^d_t = omega + alpha (|eps| - gamma eps)^d + beta s^d` | `|gamma| < 1, d > 0, alpha E(|z| - gamma z)^d + beta < 1` |
//!
//! TGARCH is the Zakoïan absolute-value model, i.e. APARCH with `d = 1`.
//! Recursions start from the unconditional level of the recursed quantity
//! (`s2`, `s`, `s^d`); EGARCH starts from the sample variance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dist::{Innovation, InnovationKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GarchFamily {
    Garch,
    Egarch,
    Gjr,
    Tgarch,
    Aparch,
}

impl GarchFamily {
    pub const ALL: [GarchFamily; 5] = [
        GarchFamily::Garch,
        GarchFamily::Egarch,
        GarchFamily::Gjr,
        GarchFamily::Tgarch,
        GarchFamily::Aparch,
    ];

    pub fn label(self) -> &'static str {
        match self {
            GarchFamily::Garch => "sgarch",
            GarchFamily::Egarch => "egarch",
            GarchFamily::Gjr => "gjrgarch",
            GarchFamily::Tgarch => "tgarch",
            GarchFamily::Aparch => "aparch",
        }
    }

    /// Free parameters of the variance equation.
    pub fn n_variance_params(self) -> usize {
        match self {
            GarchFamily::Garch => 3,
            GarchFamily::Egarch | GarchFamily::Gjr | GarchFamily::Tgarch => 4,
            GarchFamily::Aparch => 5,
        }
    }

    fn power(self, delta: f64) -> f64 {
        match self {
            GarchFamily::Tgarch => 1.0,
            GarchFamily::Aparch => delta,
            _ => 2.0,
        }
    }
}

/// One cell of the marginal grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MarginalSpec {
    pub family: GarchFamily,
    pub innovation: InnovationKind,
}

impl MarginalSpec {
    pub fn new(family: GarchFamily, innovation: InnovationKind) -> Self {
        Self { family, innovation }
    }

    /// The full 5 x 4 grid.
    pub fn grid() -> Vec<MarginalSpec> {
        GarchFamily::ALL
            .into_iter()
            .flat_map(|f| InnovationKind::ALL.into_iter().map(move |d| MarginalSpec::new(f, d)))
            .collect()
    }

    /// Number of free parameters (mean + variance + shape).
    pub fn n_params(&self) -> usize {
        3 + self.family.n_variance_params() + self.innovation.n_shape()
    }
}

impl fmt::Display for MarginalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.family.label(), self.innovation.label())
    }
}

impl FromStr for MarginalSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (fam, dist) = s
            .split_once('-')
            .ok_or_else(|| Error::invalid(format!("marginal spec `{s}` is not of the form family-dist")))?;
        let family = GarchFamily::ALL
            .into_iter()
            .find(|f| f.label() == fam)
            .ok_or_else(|| Error::invalid(format!("unknown variance family `{fam}`")))?;
        let innovation = InnovationKind::from_label(dist)
            .ok_or_else(|| Error::invalid(format!("unknown innovation `{dist}`")))?;
        Ok(MarginalSpec::new(family, innovation))
    }
}

/// Parameters of an ARMA(1,1)-GARCH-type model. Fields unused by a family
/// (e.g. `gamma` for GARCH, `delta` outside APARCH) are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmaGarchParams {
    pub mu: f64,
    pub phi: f64,
    pub theta: f64,
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Tail (t, skew-t) or shape (GED) parameter.
    pub nu: f64,
    /// Fernández–Steel skew.
    pub xi: f64,
}

impl Default for ArmaGarchParams {
    fn default() -> Self {
        Self {
            mu: 0.0,
            phi: 0.0,
            theta: 0.0,
            omega: 0.0,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta: 2.0,
            nu: 8.0,
            xi: 1.0,
        }
    }
}

impl ArmaGarchParams {
    /// Plain GARCH(1,1) with a zero mean equation.
    pub fn garch(omega: f64, alpha: f64, beta: f64) -> Self {
        Self {
            omega,
            alpha,
            beta,
            ..Default::default()
        }
    }

    pub fn innovation(&self, kind: InnovationKind) -> Result<Innovation> {
        Innovation::from_kind(kind, self.nu, self.xi)
    }

    /// Free parameters in a fixed order, paired with their names.
    pub fn free(&self, spec: &MarginalSpec) -> Vec<(&'static str, f64)> {
        let mut v = vec![("mu", self.mu), ("phi", self.phi), ("theta", self.theta), ("omega", self.omega), ("alpha", self.alpha)];
        if spec.family != GarchFamily::Garch {
            v.push(("gamma", self.gamma));
        }
        v.push(("beta", self.beta));
        if spec.family == GarchFamily::Aparch {
            v.push(("delta", self.delta));
        }
        match spec.innovation {
            InnovationKind::Normal => {}
            InnovationKind::StudentT | InnovationKind::Ged => v.push(("nu", self.nu)),
            InnovationKind::SkewT => {
                v.push(("nu", self.nu));
                v.push(("xi", self.xi));
            }
        }
        v
    }

    /// Inverse of [`ArmaGarchParams::free`].
    pub fn with_free(&self, spec: &MarginalSpec, values: &[f64]) -> Self {
        let mut p = *self;
        for ((name, _), &v) in self.free(spec).iter().zip(values) {
            match *name {
                "mu" => p.mu = v,
                "phi" => p.phi = v,
                "theta" => p.theta = v,
                "omega" => p.omega = v,
                "alpha" => p.alpha = v,
                "gamma" => p.gamma = v,
                "beta" => p.beta = v,
                "delta" => p.delta = v,
                "nu" => p.nu = v,
                "xi" => p.xi = v,
                _ => unreachable!(),
            }
        }
        p
    }

    /// Persistence of the recursed quantity; < 1 is required for
    /// stationarity (for EGARCH this is `|beta|`).
    pub fn persistence(&self, spec: &MarginalSpec, dist: &Innovation) -> f64 {
        match spec.family {
            GarchFamily::Garch => self.alpha + self.beta,
            GarchFamily::Gjr => self.alpha + self.beta + self.gamma * dist.prob_negative(),
            GarchFamily::Egarch => self.beta.abs(),
            GarchFamily::Tgarch | GarchFamily::Aparch => {
                let d = spec.family.power(self.delta);
                self.alpha * dist.asym_power_moment(self.gamma, d) + self.beta
            }
        }
    }

    /// Checks positivity and stationarity constraints for `spec`.
    pub fn validate(&self, spec: &MarginalSpec) -> Result<()> {
        let dist = self.innovation(spec.innovation)?;
        let all = [self.mu, self.phi, self.theta, self.omega, self.alpha, self.beta, self.gamma, self.delta];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        if self.phi.abs() >= 1.0 || self.theta.abs() >= 1.0 {
            return Err(Error::NonStationary(format!("|phi| = {}, |theta| = {} must be < 1", self.phi.abs(), self.theta.abs())));
        }
        match spec.family {
            GarchFamily::Egarch => {}
            _ => {
                if self.omega <= 0.0 || self.alpha < 0.0 || self.beta < 0.0 {
                    return Err(Error::invalid(format!(
                        "{}: omega > 0, alpha >= 0, beta >= 0 required",
                        spec.family.label()
                    )));
                }
            }
        }
        match spec.family {
            GarchFamily::Gjr if self.gamma < 0.0 => {
                return Err(Error::invalid("gjrgarch: gamma >= 0 required"));
            }
            GarchFamily::Tgarch | GarchFamily::Aparch if self.gamma.abs() >= 1.0 => {
                return Err(Error::invalid("|gamma| < 1 required"));
            }
            GarchFamily::Aparch if self.delta <= 0.0 => {
                return Err(Error::invalid("aparch: delta > 0 required"));
            }
            _ => {}
        }
        let p = self.persistence(spec, &dist);
        if !(p < 1.0) {
            return Err(Error::NonStationary(format!("{} persistence {p} >= 1", spec.family.label())));
        }
        Ok(())
    }

    /// Unconditional level of the recursed quantity (`s2`, `s`, or `s^d`),
    /// when it exists in closed form.
    pub(crate) fn unconditional_level(&self, spec: &MarginalSpec, dist: &Innovation) -> Option<f64> {
        let p = self.persistence(spec, dist);
        match spec.family {
            GarchFamily::Egarch => None,
            _ if p < 1.0 => Some(self.omega / (1.0 - p)),
            _ => None,
        }
    }

    /// Unconditional variance `omega / (1 - alpha - beta)` for GARCH and GJR.
    pub fn unconditional_variance(&self, spec: &MarginalSpec) -> Option<f64> {
        let dist = self.innovation(spec.innovation).ok()?;
        match spec.family {
            GarchFamily::Garch | GarchFamily::Gjr => self.unconditional_level(spec, &dist),
            _ => None,
        }
    }
}

/// Per-family one-step variance update given the previous residual and variance.
#[derive(Debug, Clone, Copy)]
pub(crate) struct VarianceStep {
    family: GarchFamily,
    omega: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    power: f64,
    abs_mean: f64,
}

impl VarianceStep {
    pub(crate) fn new(params: &ArmaGarchParams, spec: &MarginalSpec, dist: &Innovation) -> Self {
        Self {
            family: spec.family,
            omega: params.omega,
            alpha: params.alpha,
            beta: params.beta,
            gamma: params.gamma,
            power: spec.family.power(params.delta),
            abs_mean: if spec.family == GarchFamily::Egarch { dist.abs_mean() } else { 0.0 },
        }
    }

    /// Next conditional variance from the last residual and variance.
    #[inline]
    pub(crate) fn next(&self, eps: f64, var: f64) -> f64 {
        match self.family {
            GarchFamily::Garch => self.omega + self.alpha * eps * eps + self.beta * var,
            GarchFamily::Gjr => {
                let a = if eps < 0.0 { self.alpha + self.gamma } else { self.alpha };
                self.omega + a * eps * eps + self.beta * var
            }
            GarchFamily::Egarch => {
                let z = eps / var.sqrt();
                (self.omega + self.alpha * z + self.gamma * (z.abs() - self.abs_mean) + self.beta * var.ln()).exp()
            }
            GarchFamily::Tgarch => {
                let s = self.omega + self.alpha * (eps.abs() - self.gamma * eps) + self.beta * var.sqrt();
                s * s
            }
            GarchFamily::Aparch => {
                let d = self.power;
                let sd = self.omega + self.alpha * (eps.abs() - self.gamma * eps).powf(d) + self.beta * var.powf(d / 2.0);
                sd.powf(2.0 / d)
            }
        }
    }

    /// Converts the unconditional level of the recursed quantity into a variance.
    pub(crate) fn level_to_variance(&self, level: f64) -> f64 {
        level.powf(2.0 / self.power)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_twenty_distinct_members() {
        let g = MarginalSpec::grid();
        assert_eq!(g.len(), 20);
        let mut labels: Vec<String> = g.iter().map(|s| s.to_string()).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 20);
        for s in &g {
            assert_eq!(s.to_string().parse::<MarginalSpec>().unwrap(), *s);
        }
        assert!("garch-norm".parse::<MarginalSpec>().is_err());
    }

    #[test]
    fn stationarity_is_enforced() {
        let spec = MarginalSpec::new(GarchFamily::Garch, InnovationKind::Normal);
        assert!(ArmaGarchParams::garch(0.1, 0.1, 0.8).validate(&spec).is_ok());
        assert!(matches!(
            ArmaGarchParams::garch(0.1, 0.3, 0.7).validate(&spec),
            Err(Error::NonStationary(_))
        ));
        assert!(ArmaGarchParams::garch(0.0, 0.1, 0.8).validate(&spec).is_err());
    }

    #[test]
    fn free_parameter_round_trip() {
        for spec in MarginalSpec::grid() {
            let p = ArmaGarchParams {
                mu: 0.1,
                phi: 0.2,
                theta: -0.1,
                omega: 0.05,
                alpha: 0.07,
                beta: 0.85,
                gamma: 0.03,
                delta: 1.4,
                nu: 6.0,
                xi: 1.1,
            };
            let free = p.free(&spec);
            assert_eq!(free.len(), spec.n_params());
            let values: Vec<f64> = free.iter().map(|x| x.1).collect();
            assert_eq!(ArmaGarchParams::default().with_free(&spec, &values).free(&spec), free);
        }
    }

    #[test]
    fn power_recursions_agree_with_garch_at_their_special_cases() {
        let dist = Innovation::Normal;
        let p = ArmaGarchParams {
            omega: 0.1,
            alpha: 0.2,
            beta: 0.5,
            gamma: 0.0,
            delta: 2.0,
            ..Default::default()
        };
        let garch = VarianceStep::new(&p, &MarginalSpec::new(GarchFamily::Garch, InnovationKind::Normal), &dist);
        let aparch = VarianceStep::new(&p, &MarginalSpec::new(GarchFamily::Aparch, InnovationKind::Normal), &dist);
        let gjr = VarianceStep::new(&p, &MarginalSpec::new(GarchFamily::Gjr, InnovationKind::Normal), &dist);
        for &(e, v) in &[(1.0, 2.0), (-0.5, 0.3), (2.0, 1.0)] {
            let g = garch.next(e, v);
            assert!((aparch.next(e, v) - g).abs() < 1e-12);
            assert!((gjr.next(e, v) - g).abs() < 1e-12);
        }
    }
}
