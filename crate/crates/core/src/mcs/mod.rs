//! Scoring functions and the bootstrap model confidence set.

mod schedule;

use rand::Rng;
use rayon::prelude::*;

pub use schedule::{mcs_schedule, McsOptions, McsRun, McsSchedule};

use crate::rng::child_rng;
use crate::{Error, Result};

pub const MCS_ALPHA: f64 = 0.15;
pub const MIN_DAYS: usize = 30;

/// Check loss of a VaR forecast, `(r + VaR)(alpha - 1{r + VaR < 0})`.
pub fn var_loss(r: f64, var: f64, alpha: f64) -> f64 {
    let u = r + var;
    u * (alpha - if u < 0.0 { 1.0 } else { 0.0 })
}

/// Zero-homogeneous joint loss of a (VaR, ES) forecast.
pub fn es_loss(var: f64, es: f64, r: f64, alpha: f64) -> Result<f64> {
    if !(es > 0.0) {
        return Err(Error::invalid(format!("ES loss needs a positive ES, got {es}")));
    }
    let hit = if r + var < 0.0 { -var - r } else { 0.0 };
    Ok(hit / (alpha * es) + var / es + es.ln() - 1.0)
}

/// Daily losses, one column per model.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    columns: Vec<Vec<f64>>,
}

impl LossMatrix {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() < 2 {
            return Err(Error::invalid("a loss matrix needs at least two models"));
        }
        let n = columns[0].len();
        for c in &columns {
            if c.len() != n {
                return Err(Error::Dimension { expected: n, got: c.len() });
            }
            if let Some(i) = c.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { index: i });
            }
        }
        Ok(Self { columns })
    }

    pub fn n_days(&self) -> usize {
        self.columns[0].len()
    }

    pub fn n_models(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn means(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Elimination {
    pub model: usize,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsResult {
    /// Column indices of the surviving models, ascending.
    pub survivors: Vec<usize>,
    /// Monotonised MCS p-value per column.
    pub p_values: Vec<f64>,
    pub eliminated: Vec<Elimination>,
}

impl McsResult {
    pub fn all_survive(m: usize) -> Self {
        Self { survivors: (0..m).collect(), p_values: vec![1.0; m], eliminated: Vec::new() }
    }

    pub fn survived(&self, i: usize) -> bool {
        self.survivors.binary_search(&i).is_ok()
    }

    /// 1-based elimination rank, `None` for survivors.
    pub fn elimination_rank(&self, i: usize) -> Option<usize> {
        self.eliminated.iter().position(|e| e.model == i).map(|k| k + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McsConfig {
    pub alpha: f64,
    pub bootstrap_n: usize,
    /// Defaults to `ceil(n^(1/3))`.
    pub block_length: Option<usize>,
    pub seed: u64,
}

impl Default for McsConfig {
    fn default() -> Self {
        Self { alpha: MCS_ALPHA, bootstrap_n: 1000, block_length: None, seed: 0 }
    }
}

pub fn default_block_length(n: usize) -> usize {
    let b = (n as f64).cbrt().ceil() as usize;
    // guard against cbrt rounding just above an integer cube
    if (b - 1).pow(3) >= n { b - 1 } else { b }.max(1)
}

/// Circular moving-block resample of `0..n`.
fn block_indices(rng: &mut impl Rng, n: usize, block: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(n);
    while idx.len() < n {
        let s = rng.random_range(0..n);
        for k in 0..block.min(n - idx.len()) {
            idx.push((s + k) % n);
        }
    }
    idx
}

/// Model confidence set with the range statistic `T_R = max |t_ij|`.
/// One block-bootstrap index set per replicate is shared by all models.
pub fn mcs(losses: &LossMatrix, cfg: &McsConfig) -> Result<McsResult> {
    let (n, m) = (losses.n_days(), losses.n_models());
    if n < MIN_DAYS {
        return Err(Error::TooShort { need: MIN_DAYS, got: n });
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::invalid(format!("MCS alpha {} outside (0, 1)", cfg.alpha)));
    }
    if cfg.bootstrap_n == 0 {
        return Err(Error::invalid("MCS needs at least one bootstrap replicate"));
    }
    let block = cfg.block_length.unwrap_or_else(|| default_block_length(n));
    if block == 0 || block > n {
        return Err(Error::invalid(format!("block length {block} outside 1..={n}")));
    }
    let means = losses.means();
    // boot[b][i]: mean loss of model i on replicate b
    let boot: Vec<Vec<f64>> = (0..cfg.bootstrap_n)
        .into_par_iter()
        .map(|b| {
            let mut rng = child_rng(cfg.seed, &[b as u64]);
            let idx = block_indices(&mut rng, n, block);
            (0..m)
                .map(|i| {
                    let c = losses.column(i);
                    idx.iter().map(|&t| c[t]).sum::<f64>() / n as f64
                })
                .collect()
        })
        .collect();
    // centred replicate deviations of each model's mean
    let dev: Vec<Vec<f64>> = boot.iter().map(|r| r.iter().zip(&means).map(|(x, mu)| x - mu).collect()).collect();
    let nb = cfg.bootstrap_n as f64;
    let mut var = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let v = dev.iter().map(|r| (r[i] - r[j]).powi(2)).sum::<f64>() / nb;
            var[i][j] = v;
            var[j][i] = v;
        }
    }
    let tstat = |num: f64, v: f64| if v > 0.0 { num / v.sqrt() } else if num == 0.0 { 0.0 } else { num.signum() * f64::INFINITY };

    let mut alive: Vec<usize> = (0..m).collect();
    let mut eliminated = Vec::new();
    let mut p_values = vec![1.0; m];
    let mut running = 0.0f64;
    while alive.len() > 1 {
        let mut t_r = 0.0f64;
        let mut worst = (alive[0], f64::NEG_INFINITY);
        for &i in &alive {
            let mut sup = f64::NEG_INFINITY;
            for &j in &alive {
                if i != j {
                    let t = tstat(means[i] - means[j], var[i][j]);
                    t_r = t_r.max(t.abs());
                    sup = sup.max(t);
                }
            }
            if sup > worst.1 {
                worst = (i, sup);
            }
        }
        let exceed = dev
            .iter()
            .filter(|r| {
                let mut tb = 0.0f64;
                for (a, &i) in alive.iter().enumerate() {
                    for &j in &alive[a + 1..] {
                        tb = tb.max(tstat(r[i] - r[j], var[i][j]).abs());
                    }
                }
                tb >= t_r
            })
            .count();
        let p = exceed as f64 / nb;
        running = running.max(p);
        if p >= cfg.alpha {
            break;
        }
        p_values[worst.0] = running;
        eliminated.push(Elimination { model: worst.0, statistic: t_r, p_value: p });
        alive.retain(|&k| k != worst.0);
    }
    let final_p = if alive.len() == 1 { 1.0 } else { running };
    for &i in &alive {
        p_values[i] = final_p;
    }
    Ok(McsResult { survivors: alive, p_values, eliminated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, Normal, StandardNormal, StudentT};

    #[test]
    fn var_loss_values() {
        assert_eq!(var_loss(-1.0, 1.0, 0.01), 0.0);
        assert!((var_loss(0.0, 1.0, 0.01) - 0.01).abs() < 1e-15);
        assert!((var_loss(-2.0, 1.0, 0.01) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn es_loss_values() {
        assert_eq!(es_loss(1.0, 1.0, 0.0, 0.025).unwrap(), 0.0);
        assert!((es_loss(1.0, 1.0, -2.0, 0.025).unwrap() - 40.0).abs() < 1e-12);
        assert!(es_loss(1.0, 0.0, 0.0, 0.025).is_err());
        // joint scaling moves every model's loss by the same log c
        let c = 3.7;
        for (v, e, r) in [(1.0, 1.4, -2.0), (0.8, 1.1, 0.3), (2.0, 2.5, -2.2)] {
            let d = es_loss(c * v, c * e, c * r, 0.01).unwrap() - es_loss(v, e, r, 0.01).unwrap();
            assert!((d - c.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn check_loss_elicits_the_quantile() {
        let mut rng = rng_from_seed(21);
        for (n, alpha) in [(200, 0.05), (199, 0.05), (150, 0.01), (37, 0.1)] {
            let xs: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let avg = |v: f64| xs.iter().map(|&r| var_loss(r, v, alpha)).sum::<f64>() / n as f64;
            // the objective is piecewise linear with kinks at the sample points
            let best = xs.iter().map(|&x| avg(-x)).fold(f64::INFINITY, f64::min);
            let (var, _) = crate::forecast::var_es_from_sample(&xs, 1.0 - alpha).unwrap();
            assert!(avg(var) <= best + 1e-12, "n {n}: {} {best}", avg(var));
            if (n as f64 * alpha).fract() != 0.0 {
                // unique minimiser away from integer n * alpha
                assert!(xs.iter().filter(|&&x| -x != var).all(|&x| avg(-x) > best + 1e-12));
            }
        }
    }

    #[test]
    fn joint_loss_elicits_var_and_es() {
        let mut rng = rng_from_seed(22);
        let alpha = 0.025;
        let xs: Vec<f64> = (0..200_000).map(|_| rng.sample(StandardNormal)).collect();
        // standard normal at 97.5%: VaR 1.95996, ES 2.33780
        let grid = |lo: f64| (0..41).map(move |k| lo + 0.01 * k as f64);
        let mut best = (0.0, 0.0, f64::INFINITY);
        for v in grid(1.76) {
            for e in grid(2.14) {
                if e < v {
                    continue;
                }
                let s: f64 = xs.iter().map(|&r| es_loss(v, e, r, alpha).unwrap()).sum();
                if s < best.2 {
                    best = (v, e, s);
                }
            }
        }
        assert!((best.0 - 1.95996).abs() < 0.03 && (best.1 - 2.33780).abs() < 0.03, "{best:?}");
    }

    fn cfg(seed: u64) -> McsConfig {
        McsConfig { seed, ..McsConfig::default() }
    }

    #[test]
    fn identical_losses_all_survive() {
        let c: Vec<f64> = (0..100).map(|t| (t as f64 * 0.37).sin().abs()).collect();
        let r = mcs(&LossMatrix::new(vec![c.clone(), c.clone(), c]).unwrap(), &cfg(1)).unwrap();
        assert_eq!(r.survivors, vec![0, 1, 2]);
        assert_eq!(r.p_values, vec![1.0; 3]);
        assert!(r.eliminated.is_empty());
        let short = LossMatrix::new(vec![vec![0.0; 10], vec![0.0; 10]]).unwrap();
        assert!(mcs(&short, &cfg(1)).is_err());
    }

    fn dominated_case(seed: u64) -> LossMatrix {
        let mut rng = rng_from_seed(seed);
        let noise = Normal::<f64>::new(0.0, 0.3).unwrap();
        let base: Vec<f64> = (0..500).map(|_| 1.0 + StudentT::<f64>::new(5.0).unwrap().sample(&mut rng).abs()).collect();
        let mut cols = vec![base.clone(), base.iter().map(|x| x + 0.5).collect()];
        for _ in 0..8 {
            cols.push(base.iter().map(|x| x + noise.sample(&mut rng).abs() * 0.1 + noise.sample(&mut rng)).collect());
        }
        LossMatrix::new(cols).unwrap()
    }

    #[test]
    fn dominated_model_eliminated() {
        let mut kept_a = 0;
        for seed in 0..40 {
            let r = mcs(&dominated_case(seed), &McsConfig { bootstrap_n: 500, ..cfg(seed) }).unwrap();
            assert!(!r.survived(1), "seed {seed}");
            kept_a += r.survived(0) as usize;
            assert_eq!(r.survivors.len() + r.eliminated.len(), 10);
            for w in r.eliminated.windows(2) {
                assert!(r.p_values[w[0].model] <= r.p_values[w[1].model]);
            }
            for e in &r.eliminated {
                assert!(r.p_values[e.model] < 0.15);
            }
            assert!(r.survivors.iter().all(|&s| r.p_values[s] >= 0.15));
        }
        assert!(kept_a >= 38, "{kept_a}");
    }

    #[test]
    fn deterministic_and_order_free() {
        let l = dominated_case(5);
        let a = mcs(&l, &cfg(9)).unwrap();
        assert_eq!(a, mcs(&l, &cfg(9)).unwrap());
        let perm: Vec<usize> = (0..10).rev().collect();
        let lp = LossMatrix::new(perm.iter().map(|&i| l.column(i).to_vec()).collect()).unwrap();
        let b = mcs(&lp, &cfg(9)).unwrap();
        let mut back: Vec<usize> = b.survivors.iter().map(|&i| perm[i]).collect();
        back.sort();
        assert_eq!(a.survivors, back);
    }

    #[test]
    fn covers_the_best_model() {
        let reps = 200;
        let mut covered = 0;
        for rep in 0..reps {
            let mut rng = rng_from_seed(1000 + rep);
            let cols: Vec<Vec<f64>> = (0..20)
                .map(|k| {
                    let mu = if k == 0 { 1.0 } else { 1.05 };
                    (0..250).map(|_| mu + rng.sample::<f64, _>(StandardNormal)).collect()
                })
                .collect();
            let r = mcs(&LossMatrix::new(cols).unwrap(), &McsConfig { bootstrap_n: 300, ..cfg(rep) }).unwrap();
            covered += r.survived(0) as usize;
        }
        assert!(covered as f64 >= 0.8 * reps as f64, "{covered}");
    }

    #[test]
    fn block_length_default() {
        assert_eq!(default_block_length(500), 8);
        assert_eq!(default_block_length(27), 3);
        assert_eq!(default_block_length(28), 4);
        assert_eq!(default_block_length(1000), 10);
    }
}
