//! Dependence models on pseudo-observations.
//!
//! Nine families share one fit/simulate interface: gaussian, student_t,
//! clayton, gumbel, frank, joe (exchangeable), an R-vine, a three-component
//! Gaussian mixture copula and DCC with multivariate-t innovations.

mod archimedean;
mod dcc;
mod elliptical;
mod gmc;
mod pair;
mod vine;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

pub use archimedean::simulate_archimedean;
pub use dcc::{fit_dcc, Dcc};
pub use elliptical::{correlation_from_tau, gaussian_loglik, kendall_matrix, nearest_pd_correlation, t_loglik, EIGEN_FLOOR, NU_RANGE};
pub use gmc::{fit_gmc, GaussianMixture, GMC_MAX_ITER, GMC_RESTARTS, GMC_TOL};
pub use pair::{
    clayton_tau, debye1, frank_tau, gumbel_tau, joe_tau, select_pair, theta_from_tau, PairCopula, PairFamily, THETA_CAP,
    UNIT_CLAMP,
};
pub use vine::{fit_vine, Vine, VineEdge};

use crate::rng::rng_from_seed;
use crate::stats::{average_ranks, mean};
use crate::{Error, Result};

/// Minimum sample size for copula estimation.
pub const MIN_COPULA_LENGTH: usize = 50;
pub const GMC_COMPONENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CopulaFamily {
    Gaussian,
    StudentT,
    Clayton,
    Gumbel,
    Frank,
    Joe,
    Vine,
    Gmc,
    Dcc,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 9] = [
        CopulaFamily::Gaussian,
        CopulaFamily::StudentT,
        CopulaFamily::Clayton,
        CopulaFamily::Gumbel,
        CopulaFamily::Frank,
        CopulaFamily::Joe,
        CopulaFamily::Vine,
        CopulaFamily::Gmc,
        CopulaFamily::Dcc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CopulaFamily::Gaussian => "gaussian",
            CopulaFamily::StudentT => "student_t",
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Gumbel => "gumbel",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Joe => "joe",
            CopulaFamily::Vine => "vine",
            CopulaFamily::Gmc => "gmc",
            CopulaFamily::Dcc => "dcc",
        }
    }

    fn archimedean(self) -> Option<PairFamily> {
        match self {
            CopulaFamily::Clayton => Some(PairFamily::Clayton),
            CopulaFamily::Gumbel => Some(PairFamily::Gumbel),
            CopulaFamily::Frank => Some(PairFamily::Frank),
            CopulaFamily::Joe => Some(PairFamily::Joe),
            _ => None,
        }
    }
}

impl fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CopulaFamily::ALL
            .into_iter()
            .find(|f| f.label() == s)
            .ok_or_else(|| Error::invalid(format!("unknown copula family `{s}`")))
    }
}

/// T x K matrix with entries strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservations(DMatrix<f64>);

impl PseudoObservations {
    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        if let Some(i) = u.iter().position(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::invalid(format!("pseudo-observation {i} not in (0, 1)")));
        }
        Ok(Self(u))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }
}

/// Rank transform `rank / (T + 1)` per column, average ranks on ties.
pub fn pseudo_obs(z: &DMatrix<f64>) -> Result<PseudoObservations> {
    let t = z.nrows();
    if t < 2 {
        return Err(Error::TooShort { need: 2, got: t });
    }
    let mut u = DMatrix::zeros(t, z.ncols());
    for j in 0..z.ncols() {
        let col: Vec<f64> = z.column(j).iter().copied().collect();
        if let Some(i) = col.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        for (i, r) in average_ranks(&col).into_iter().enumerate() {
            u[(i, j)] = r / (t as f64 + 1.0);
        }
    }
    PseudoObservations::new(u)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedCopula {
    Gaussian { corr: DMatrix<f64>, loglik: f64 },
    StudentT { corr: DMatrix<f64>, nu: f64, loglik: f64 },
    Archimedean { family: CopulaFamily, theta: f64, dim: usize, mean_tau: f64 },
    Vine(Vine),
    Gmc(GaussianMixture),
    Dcc(Dcc),
}

impl FittedCopula {
    pub fn family(&self) -> CopulaFamily {
        match self {
            FittedCopula::Gaussian { .. } => CopulaFamily::Gaussian,
            FittedCopula::StudentT { .. } => CopulaFamily::StudentT,
            FittedCopula::Archimedean { family, .. } => *family,
            FittedCopula::Vine(_) => CopulaFamily::Vine,
            FittedCopula::Gmc(_) => CopulaFamily::Gmc,
            FittedCopula::Dcc(_) => CopulaFamily::Dcc,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FittedCopula::Gaussian { corr, .. } | FittedCopula::StudentT { corr, .. } => corr.nrows(),
            FittedCopula::Archimedean { dim, .. } => *dim,
            FittedCopula::Vine(v) => v.dim,
            FittedCopula::Gmc(m) => m.dim(),
            FittedCopula::Dcc(d) => d.r_next.nrows(),
        }
    }

    pub fn loglik(&self) -> Option<f64> {
        match self {
            FittedCopula::Gaussian { loglik, .. } | FittedCopula::StudentT { loglik, .. } => Some(*loglik),
            FittedCopula::Archimedean { .. } => None,
            FittedCopula::Vine(v) => Some(v.loglik),
            FittedCopula::Gmc(m) => Some(m.loglik),
            FittedCopula::Dcc(d) => Some(d.loglik),
        }
    }

    /// Builds a Gaussian copula from a correlation matrix.
    pub fn gaussian(corr: DMatrix<f64>) -> Result<Self> {
        check_correlation(&corr)?;
        Ok(FittedCopula::Gaussian { corr, loglik: f64::NAN })
    }

    pub fn student_t(corr: DMatrix<f64>, nu: f64) -> Result<Self> {
        check_correlation(&corr)?;
        if !(nu > 2.0) {
            return Err(Error::invalid(format!("t copula needs nu > 2, got {nu}")));
        }
        Ok(FittedCopula::StudentT { corr, nu, loglik: f64::NAN })
    }

    /// Builds an exchangeable Archimedean copula of dimension `dim`.
    pub fn archimedean(family: CopulaFamily, theta: f64, dim: usize) -> Result<Self> {
        let pf = family
            .archimedean()
            .ok_or_else(|| Error::invalid(format!("{family} is not Archimedean")))?;
        PairCopula::new(pf, 0, theta, 0.0)?;
        if dim < 2 {
            return Err(Error::invalid("copula dimension must be at least 2"));
        }
        if pf == PairFamily::Frank && theta < 0.0 && dim > 2 {
            return Err(Error::invalid("negative Frank parameter only valid in two dimensions"));
        }
        let mean_tau = PairCopula { family: pf, rotation: 0, par: theta, par2: 0.0 }.tau();
        Ok(FittedCopula::Archimedean { family, theta, dim, mean_tau })
    }

    /// Draws an `n x K` matrix of uniforms.
    pub fn simulate_with<R: rand::Rng>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        match self {
            FittedCopula::Gaussian { corr, .. } => elliptical::simulate_elliptical(corr, None, n, rng),
            FittedCopula::StudentT { corr, nu, .. } => elliptical::simulate_elliptical(corr, Some(*nu), n, rng),
            FittedCopula::Archimedean { family, theta, dim, .. } => {
                Ok(simulate_archimedean(family.archimedean().expect("archimedean"), *theta, *dim, n, rng))
            }
            FittedCopula::Vine(v) => Ok(v.simulate(n, rng)),
            FittedCopula::Gmc(m) => m.simulate(n, rng),
            FittedCopula::Dcc(d) => elliptical::simulate_elliptical(&d.r_next, Some(d.nu), n, rng),
        }
    }

    /// Flat `key=value` parameter pairs for dumps.
    pub fn params_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![("family".to_string(), self.family().label().to_string())];
        let corr_kv = |kv: &mut Vec<(String, String)>, r: &DMatrix<f64>, name: &str| {
            for i in 0..r.nrows() {
                for j in (i + 1)..r.ncols() {
                    kv.push((format!("{name}_{i}_{j}"), fmt_f(r[(i, j)])));
                }
            }
        };
        match self {
            FittedCopula::Gaussian { corr, .. } => corr_kv(&mut kv, corr, "rho"),
            FittedCopula::StudentT { corr, nu, .. } => {
                corr_kv(&mut kv, corr, "rho");
                kv.push(("nu".into(), fmt_f(*nu)));
            }
            FittedCopula::Archimedean { theta, mean_tau, .. } => {
                kv.push(("theta".into(), fmt_f(*theta)));
                kv.push(("mean_tau".into(), fmt_f(*mean_tau)));
            }
            FittedCopula::Vine(v) => {
                kv.push(("edges".into(), v.edges.len().to_string()));
                kv.push(("clamped".into(), v.clamped.to_string()));
            }
            FittedCopula::Gmc(m) => {
                for j in 0..m.n_components() {
                    kv.push((format!("weight_{j}"), fmt_f(m.weights[j])));
                    for k in 0..m.dim() {
                        kv.push((format!("mean_{j}_{k}"), fmt_f(m.means[j][k])));
                    }
                    for a in 0..m.dim() {
                        for b in a..m.dim() {
                            kv.push((format!("cov_{j}_{a}_{b}"), fmt_f(m.covs[j][(a, b)])));
                        }
                    }
                }
            }
            FittedCopula::Dcc(d) => {
                kv.push(("a".into(), fmt_f(d.a)));
                kv.push(("b".into(), fmt_f(d.b)));
                kv.push(("nu".into(), fmt_f(d.nu)));
                corr_kv(&mut kv, &d.r_next, "r_next");
            }
        }
        if let Some(ll) = self.loglik() {
            if ll.is_finite() {
                kv.push(("loglik".into(), fmt_f(ll)));
            }
        }
        kv
    }

    /// Vine edge list rows: tree, conditioned pair, conditioning set, family,
    /// rotation, parameters. Empty for other families.
    pub fn edge_rows(&self) -> Vec<[String; 7]> {
        let FittedCopula::Vine(v) = self else { return Vec::new() };
        v.edges
            .iter()
            .map(|e| {
                let cond = e.conditioning.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
                let p2 = if e.copula.family == PairFamily::StudentT { fmt_f(e.copula.par2) } else { String::new() };
                [
                    e.tree.to_string(),
                    format!("{};{}", e.conditioned.0, e.conditioned.1),
                    cond,
                    e.copula.family.label().to_string(),
                    e.copula.rotation.to_string(),
                    fmt_f(e.copula.par),
                    p2,
                ]
            })
            .collect()
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.12e}")
}

fn check_correlation(r: &DMatrix<f64>) -> Result<()> {
    if r.nrows() != r.ncols() || r.nrows() < 1 {
        return Err(Error::invalid("correlation matrix must be square and non-empty"));
    }
    let sym = (r - r.transpose()).abs().max() < 1e-12;
    let unit = r.diagonal().iter().all(|d| (d - 1.0).abs() < 1e-12);
    if !sym || !unit || r.clone().cholesky().is_none() {
        return Err(Error::invalid("correlation matrix must be symmetric PD with unit diagonal"));
    }
    Ok(())
}

/// Average of the off-diagonal pairwise Kendall's tau.
pub fn mean_pairwise_tau(u: &DMatrix<f64>) -> f64 {
    let m = kendall_matrix(u);
    let k = m.nrows();
    let mut taus = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            taus.push(m[(i, j)]);
        }
    }
    mean(&taus)
}

/// Fits a copula family to pseudo-observations. DCC needs standardized
/// residuals and goes through [`fit_dependence`].
pub fn fit_copula(u: &PseudoObservations, family: CopulaFamily, seed: u64) -> Result<FittedCopula> {
    let (t, k) = (u.nrows(), u.ncols());
    if k < 2 {
        return Err(Error::invalid("dependence model needs at least two series"));
    }
    if t < MIN_COPULA_LENGTH {
        return Err(Error::TooShort { need: MIN_COPULA_LENGTH, got: t });
    }
    let m = u.matrix();
    match family {
        CopulaFamily::Gaussian => {
            let (corr, loglik) = elliptical::fit_gaussian(m)?;
            Ok(FittedCopula::Gaussian { corr, loglik })
        }
        CopulaFamily::StudentT => {
            let (corr, nu, loglik) = elliptical::fit_t(m)?;
            Ok(FittedCopula::StudentT { corr, nu, loglik })
        }
        CopulaFamily::Clayton | CopulaFamily::Gumbel | CopulaFamily::Frank | CopulaFamily::Joe => {
            let pf = family.archimedean().expect("archimedean");
            let tau = mean_pairwise_tau(m);
            let mut theta = theta_from_tau(pf, tau)?;
            if pf == PairFamily::Frank && k > 2 && theta < 1e-6 {
                theta = 1e-6;
            }
            FittedCopula::archimedean(family, theta, k)
        }
        CopulaFamily::Vine => Ok(FittedCopula::Vine(fit_vine(m)?)),
        CopulaFamily::Gmc => {
            if t < 100 {
                return Err(Error::TooShort { need: 100, got: t });
            }
            Ok(FittedCopula::Gmc(fit_gmc(m, GMC_COMPONENTS, seed)?))
        }
        CopulaFamily::Dcc => Err(Error::invalid("DCC is fitted on standardized residuals; use fit_dependence")),
    }
}

/// Fits any family from standardized residuals (pseudo-observations are
/// derived internally for the copula families).
pub fn fit_dependence(std_resid: &DMatrix<f64>, family: CopulaFamily, seed: u64) -> Result<FittedCopula> {
    match family {
        CopulaFamily::Dcc => Ok(FittedCopula::Dcc(fit_dcc(std_resid)?)),
        _ => fit_copula(&pseudo_obs(std_resid)?, family, seed),
    }
}

/// Draws `n` uniform vectors from `fc` with a stream seeded by `seed`.
pub fn simulate_copula(fc: &FittedCopula, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = rng_from_seed(seed);
    fc.simulate_with(n, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_p_value, ks_uniform_statistic};

    #[test]
    fn pseudo_obs_rank_arithmetic() {
        let z = DMatrix::from_column_slice(3, 2, &[3.0, 1.0, 2.0, 1.0, 1.0, 2.0]);
        let u = pseudo_obs(&z).unwrap();
        let m = u.matrix();
        assert_eq!(m.column(0).iter().copied().collect::<Vec<_>>(), vec![0.75, 0.25, 0.5]);
        assert_eq!(m.column(1).iter().copied().collect::<Vec<_>>(), vec![0.375, 0.375, 0.75]);
    }

    #[test]
    fn every_family_simulates_inside_the_cube() {
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.3, 0.5, 1.0, 0.4, 0.3, 0.4, 1.0]);
        let src = simulate_copula(&FittedCopula::gaussian(r).unwrap(), 400, 1).unwrap();
        let z = src.map(crate::stats::norm_quantile);
        for fam in CopulaFamily::ALL {
            let fc = fit_dependence(&z, fam, 5).unwrap();
            assert_eq!(fc.family(), fam);
            let u = simulate_copula(&fc, 2000, 9).unwrap();
            assert_eq!(u.shape(), (2000, 3));
            assert!(u.iter().all(|&x| x > 0.0 && x < 1.0), "{fam}");
            for j in 0..3 {
                let col: Vec<f64> = u.column(j).iter().copied().collect();
                assert!(ks_p_value(ks_uniform_statistic(&col), col.len()) > 1e-3, "{fam} margin {j}");
            }
            assert_eq!(u, simulate_copula(&fc, 2000, 9).unwrap());
        }
    }

    #[test]
    fn family_labels_round_trip() {
        for f in CopulaFamily::ALL {
            assert_eq!(f.label().parse::<CopulaFamily>().unwrap(), f);
        }
    }

    #[test]
    fn short_or_univariate_input_rejected() {
        let u = PseudoObservations::new(DMatrix::from_element(60, 1, 0.5)).unwrap();
        assert!(fit_copula(&u, CopulaFamily::Gaussian, 0).is_err());
        let u = PseudoObservations::new(DMatrix::from_element(10, 2, 0.5)).unwrap();
        assert!(fit_copula(&u, CopulaFamily::Clayton, 0).is_err());
    }
}
