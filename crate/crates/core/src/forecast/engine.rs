use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{check_level, Cell, ForecastCube, ModelId, Reason, DEFAULT_DRAWS};
use crate::copulas::{fit_dependence, CopulaFamily, FittedCopula};
use crate::data::{portfolio_return, rolling_windows, ReturnPanel, WeightSet, Window, WindowPlan};
use crate::marginals::{
    fit_marginal, forecast_one_step, risk_from_moments, ArmaGarchParams, FittedMarginal, Innovation, MarginalSpec, OneStep,
};
use crate::rng::{derive_seed, key_of, rng_from_seed};
use crate::{Error, Result};

/// Empirical VaR and ES (positive losses) of a sample: the quantile is the
/// order statistic at `ceil(n (1 - level))` (1-based, no interpolation) and
/// the ES averages every draw at or below it.
pub fn var_es_from_sample(sample: &[f64], level: f64) -> Result<(f64, f64)> {
    let p = 1.0 - level;
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::invalid(format!("confidence level {level} outside (0.5, 1)")));
    }
    if sample.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    if let Some(i) = sample.iter().position(|x| x.is_nan()) {
        return Err(Error::NonFinite { index: i });
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let k = tail_count(s.len(), p);
    let q = s[k - 1];
    let cnt = s.partition_point(|&x| x <= q);
    // a tail of ties is exactly q; summing it could drift by an ulp
    let es = if s[0] == q { q } else { s[..cnt].iter().sum::<f64>() / cnt as f64 };
    Ok((-q, -es))
}

/// `ceil(n p)` in [1, n], robust to `n p` landing a rounding error above an
/// integer (e.g. `10000 * (1 - 0.975)`).
fn tail_count(n: usize, p: f64) -> usize {
    let x = n as f64 * p;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.ceil() };
    (k as usize).clamp(1, n)
}

/// `n x K` draws of next-day asset returns `mu_k + sigma_k z_k`. The
/// innovations come from the copula mapped through each marginal's
/// quantile, except for DCC which draws unit-variance multivariate-t
/// innovations directly.
pub fn asset_draws(steps: &[(OneStep, Innovation)], fc: &FittedCopula, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let k = steps.len();
    if fc.dim() != k {
        return Err(Error::Dimension { expected: k, got: fc.dim() });
    }
    let mut rng = rng_from_seed(seed);
    let mut z = match fc {
        FittedCopula::Dcc(d) => d.simulate_innovations(n, &mut rng)?,
        _ => {
            let mut u = fc.simulate_with(n, &mut rng)?;
            for (j, (_, dist)) in steps.iter().enumerate() {
                for x in u.column_mut(j).iter_mut() {
                    *x = dist.quantile(*x)?;
                }
            }
            u
        }
    };
    for (j, (step, _)) in steps.iter().enumerate() {
        let sd = step.sigma2_next.sqrt();
        for x in z.column_mut(j).iter_mut() {
            *x = step.mu_next + sd * *x;
        }
    }
    Ok(z)
}

fn portfolio_draws(draws: &DMatrix<f64>, w: &WeightSet) -> Vec<f64> {
    let w = DVector::from_column_slice(w.as_slice());
    (draws * w).iter().copied().collect()
}

/// `n` simulated next-day portfolio returns from fitted marginals and a
/// fitted dependence model.
pub fn simulate_portfolio_sample(
    marginals: &[FittedMarginal],
    fc: &FittedCopula,
    w: &WeightSet,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if w.len() != marginals.len() {
        return Err(Error::Dimension { expected: marginals.len(), got: w.len() });
    }
    let steps = marginals
        .iter()
        .map(|fm| Ok((forecast_one_step(fm, true)?, fm.innovation())))
        .collect::<Result<Vec<_>>>()?;
    Ok(portfolio_draws(&asset_draws(&steps, fc, n, seed)?, w))
}

/// The model grid: every marginal crossed with every dependence family,
/// plus univariate models of the portfolio series.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrid {
    pub marginals: Vec<MarginalSpec>,
    pub dependence: Vec<CopulaFamily>,
    pub univariate: Vec<MarginalSpec>,
}

impl ModelGrid {
    /// 20 x 9 multivariate models and 20 univariate ones.
    pub fn full() -> Self {
        Self {
            marginals: MarginalSpec::grid(),
            dependence: CopulaFamily::ALL.to_vec(),
            univariate: MarginalSpec::grid(),
        }
    }

    pub fn models(&self) -> Vec<ModelId> {
        let mut out = Vec::new();
        for &m in &self.marginals {
            for &d in &self.dependence {
                out.push(ModelId::multivariate(m, d));
            }
        }
        out.extend(self.univariate.iter().map(|&m| ModelId::univariate(m)));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptions {
    pub plan: WindowPlan,
    pub levels: Vec<f64>,
    pub n_draws: usize,
    pub seed: u64,
    /// Use the best point of unconverged marginal fits instead of
    /// invalidating their cells.
    pub allow_unconverged: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { plan: WindowPlan::default(), levels: vec![0.975, 0.99], n_draws: DEFAULT_DRAWS, seed: 0, allow_unconverged: true }
    }
}

/// Dump row for one fitted marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalFitRecord {
    pub date: NaiveDate,
    /// Asset name, or `portfolio:<weights_id>` for univariate models.
    pub series: String,
    pub spec: MarginalSpec,
    pub params: Option<ArmaGarchParams>,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    pub error: Option<String>,
}

/// Dump row for one fitted dependence model.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaFitRecord {
    pub date: NaiveDate,
    pub marginal: MarginalSpec,
    pub family: CopulaFamily,
    pub params: Vec<(String, String)>,
    pub edges: Vec<[String; 7]>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    pub cube: ForecastCube,
    pub marginal_fits: Vec<MarginalFitRecord>,
    pub copula_fits: Vec<CopulaFitRecord>,
}

struct WindowResult {
    cells: Vec<Cell>,
    marginal_fits: Vec<MarginalFitRecord>,
    copula_fits: Vec<CopulaFitRecord>,
}

fn fit_record(date: NaiveDate, series: String, spec: MarginalSpec, fit: &Result<FittedMarginal>) -> MarginalFitRecord {
    match fit {
        Ok(fm) => MarginalFitRecord {
            date,
            series,
            spec,
            params: Some(fm.params),
            loglik: fm.loglik,
            aic: fm.aic,
            converged: fm.converged,
            error: None,
        },
        Err(e) => MarginalFitRecord {
            date,
            series,
            spec,
            params: None,
            loglik: f64::NAN,
            aic: f64::NAN,
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

fn usable(fm: &FittedMarginal, opts: &GridOptions) -> std::result::Result<(OneStep, Innovation), Reason> {
    if !fm.converged && !opts.allow_unconverged {
        return Err(Reason::Unconverged);
    }
    forecast_one_step(fm, true).map(|s| (s, fm.innovation())).map_err(|_| Reason::MarginalFit)
}

/// Fits and forecasts every model for one window. Cells are laid out as
/// (model, level, weight).
fn run_window(
    panel: &ReturnPanel,
    weights: &[WeightSet],
    grid: &ModelGrid,
    models: &[ModelId],
    opts: &GridOptions,
    win: &Window,
) -> WindowResult {
    let (nl, nw) = (opts.levels.len(), weights.len());
    let mut cells = vec![Cell::failed(Reason::Simulation); models.len() * nl * nw];
    let date = panel.dates()[win.target()];
    let target = win.target() as u64;
    let k = panel.n_assets();
    let slice: Vec<Vec<f64>> = (0..k)
        .map(|j| panel.returns().column(j).rows(win.start, win.end - win.start).iter().copied().collect())
        .collect();
    let mut marginal_fits = Vec::new();
    let mut copula_fits = Vec::new();
    let mut put = |m: usize, l: usize, w: usize, c: Cell| cells[(m * nl + l) * nw + w] = c;

    for &spec in &grid.marginals {
        let fits: Vec<Result<FittedMarginal>> = slice.iter().map(|s| fit_marginal(s, spec)).collect();
        for (j, f) in fits.iter().enumerate() {
            marginal_fits.push(fit_record(date, panel.asset_names()[j].clone(), spec, f));
        }
        let steps: std::result::Result<Vec<(OneStep, Innovation)>, Reason> = fits
            .iter()
            .map(|f| f.as_ref().map_err(|_| Reason::MarginalFit).and_then(|fm| usable(fm, opts)))
            .collect();
        let z = fits.iter().all(|f| f.is_ok()).then(|| {
            DMatrix::from_fn(win.end - win.start, k, |i, j| fits[j].as_ref().expect("checked").std_resid[i])
        });
        for &fam in &grid.dependence {
            let id = ModelId::multivariate(spec, fam);
            let mi = models.iter().position(|x| *x == id).expect("grid model");
            let outcome: std::result::Result<DMatrix<f64>, Reason> = (|| {
                let steps = steps.clone()?;
                let z = z.as_ref().ok_or(Reason::MarginalFit)?;
                let fit_seed = derive_seed(opts.seed, &[target, key_of("fit"), key_of(&id.to_string())]);
                let fitted = fit_dependence(z, fam, fit_seed);
                copula_fits.push(match &fitted {
                    Ok(fc) => CopulaFitRecord { date, marginal: spec, family: fam, params: fc.params_kv(), edges: fc.edge_rows(), error: None },
                    Err(e) => CopulaFitRecord { date, marginal: spec, family: fam, params: Vec::new(), edges: Vec::new(), error: Some(e.to_string()) },
                });
                let fc = fitted.map_err(|_| Reason::DependenceFit)?;
                let sim_seed = derive_seed(opts.seed, &[target, key_of(&id.to_string())]);
                asset_draws(&steps, &fc, opts.n_draws, sim_seed).map_err(|_| Reason::Simulation)
            })();
            for (wi, w) in weights.iter().enumerate() {
                let sample = outcome.as_ref().map(|d| portfolio_draws(d, w));
                for (li, &level) in opts.levels.iter().enumerate() {
                    let cell = match &sample {
                        Ok(s) => match var_es_from_sample(s, level) {
                            Ok((v, e)) => Cell::ok(v, e),
                            Err(_) => Cell::failed(Reason::Simulation),
                        },
                        Err(r) => Cell::failed(**r),
                    };
                    put(mi, li, wi, cell);
                }
            }
        }
    }

    for (wi, w) in weights.iter().enumerate() {
        let series: Vec<f64> = (0..win.end - win.start)
            .map(|i| (0..k).map(|j| slice[j][i] * w.as_slice()[j]).sum())
            .collect();
        for &spec in &grid.univariate {
            let id = ModelId::univariate(spec);
            let mi = models.iter().position(|x| *x == id).expect("grid model");
            let fit = fit_marginal(&series, spec);
            marginal_fits.push(fit_record(date, format!("portfolio:{wi}"), spec, &fit));
            let step = fit.as_ref().map_err(|_| Reason::MarginalFit).and_then(|fm| usable(fm, opts));
            for (li, &level) in opts.levels.iter().enumerate() {
                let cell = match &step {
                    Ok((s, dist)) => match risk_from_moments(dist, *s, level) {
                        Ok((v, e)) => Cell::ok(v, e),
                        Err(_) => Cell::failed(Reason::Simulation),
                    },
                    Err(r) => Cell::failed(*r),
                };
                put(mi, li, wi, cell);
            }
        }
    }
    WindowResult { cells, marginal_fits, copula_fits }
}

/// Runs the full grid over all in-sample rolling windows. Per-window work is
/// spread over the current rayon pool; every random stream is seeded from
/// `(seed, target index, model id)` so results do not depend on scheduling.
pub fn run_grid(panel: &ReturnPanel, weights: &[WeightSet], grid: &ModelGrid, opts: &GridOptions) -> Result<GridOutput> {
    if weights.is_empty() {
        return Err(Error::invalid("at least one weight set required"));
    }
    for w in weights {
        if w.len() != panel.n_assets() {
            return Err(Error::Dimension { expected: panel.n_assets(), got: w.len() });
        }
    }
    if opts.levels.is_empty() {
        return Err(Error::invalid("at least one confidence level required"));
    }
    for &l in &opts.levels {
        check_level(l)?;
    }
    if opts.n_draws == 0 {
        return Err(Error::invalid("n_draws must be positive"));
    }
    let windows: Vec<Window> = rolling_windows(panel.n_obs(), opts.plan)?
        .into_iter()
        .filter(|w| w.in_sample)
        .collect();
    if windows.is_empty() {
        return Err(Error::TooShort { need: opts.plan.window_length + 1, got: panel.n_obs() });
    }
    let models = grid.models();
    if models.is_empty() {
        return Err(Error::invalid("empty model grid"));
    }
    let results: Vec<WindowResult> = windows
        .par_iter()
        .map(|win| run_window(panel, weights, grid, &models, opts, win))
        .collect();

    let dates: Vec<NaiveDate> = windows.iter().map(|w| panel.dates()[w.target()]).collect();
    let mut cube = ForecastCube::new(dates, models.clone(), opts.levels.clone(), weights.len())?;
    let realized: Vec<Vec<f64>> = weights.iter().map(|w| portfolio_return(panel, w)).collect::<Result<_>>()?;
    let (nl, nw) = (opts.levels.len(), weights.len());
    let mut marginal_fits = Vec::new();
    let mut copula_fits = Vec::new();
    for (d, (win, res)) in windows.iter().zip(results).enumerate() {
        for m in 0..models.len() {
            for l in 0..nl {
                for w in 0..nw {
                    cube.set_cell(d, m, l, w, res.cells[(m * nl + l) * nw + w]);
                }
            }
        }
        for (w, r) in realized.iter().enumerate() {
            cube.set_realized(d, w, r[win.target()]);
        }
        marginal_fits.extend(res.marginal_fits);
        copula_fits.extend(res.copula_fits);
    }
    Ok(GridOutput { cube, marginal_fits, copula_fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_dgp, DgpSpec};
    use crate::marginals::{GarchFamily, InnovationKind};
    use crate::rng::rng_from_seed;
    use crate::stats::{ks_two_sample, norm_pdf, norm_quantile};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn oracle(sample: &[f64], level: f64) -> (f64, f64) {
        let mut s = sample.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = s.len();
        // smallest k with k >= n (1 - level), from exact integer arithmetic on
        // the level expressed in thousandths
        let per_mille = ((1.0 - level) * 1000.0).round() as usize;
        let k = (n * per_mille).div_ceil(1000).max(1);
        let q = s[k - 1];
        let tail: Vec<f64> = s.iter().copied().filter(|&x| x <= q).collect();
        (-q, -(tail.iter().sum::<f64>() / tail.len() as f64))
    }

    #[test]
    fn toy_sample_order_statistic() {
        let s: Vec<f64> = (1..=10).map(|i| -(i as f64)).collect();
        assert_eq!(var_es_from_sample(&s, 0.9).unwrap(), (10.0, 10.0));
        assert_eq!(var_es_from_sample(&[0.3; 200], 0.99).unwrap(), (-0.3, -0.3));
        assert!(var_es_from_sample(&s, 0.4).is_err());
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = rng_from_seed(17);
        for _ in 0..300 {
            let n = rng.random_range(100..=1000);
            let s: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            for level in [0.95, 0.975, 0.99, 0.999] {
                let ((v, e), (ov, oe)) = (var_es_from_sample(&s, level).unwrap(), oracle(&s, level));
                assert_eq!((v, e), (ov, oe));
            }
        }
        assert_eq!(tail_count(10_000, 1.0 - 0.975), 250);
    }

    #[test]
    fn normal_sample_tail() {
        let mut rng = rng_from_seed(3);
        let s: Vec<f64> = (0..10_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (v, e) = var_es_from_sample(&s, 0.975).unwrap();
        let q = norm_quantile(0.025);
        assert!((v - 1.9600).abs() < 0.08);
        assert!((e - norm_pdf(q) / 0.025).abs() < 0.10);
    }

    fn normal_step(mu: f64, s2: f64) -> (OneStep, Innovation) {
        (OneStep { mu_next: mu, sigma2_next: s2 }, Innovation::Normal)
    }

    #[test]
    fn single_asset_matches_marginal() {
        let fc = FittedCopula::gaussian(DMatrix::identity(1, 1)).unwrap();
        let d = asset_draws(&[normal_step(0.1, 4.0)], &fc, 10_000, 5).unwrap();
        let a: Vec<f64> = d.iter().copied().collect();
        let mut rng = rng_from_seed(99);
        let b: Vec<f64> = (0..10_000).map(|_| 0.1 + 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(ks_two_sample(&a, &b) < 0.02);
    }

    #[test]
    fn zero_variance_draws_are_the_mean() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let fc = FittedCopula::gaussian(r).unwrap();
        let d = asset_draws(&[normal_step(0.01, 0.0), normal_step(-0.03, 0.0)], &fc, 100, 1).unwrap();
        let w = WeightSet::new(vec![0.25, 0.75]).unwrap();
        assert!(portfolio_draws(&d, &w).iter().all(|&x| x == 0.25 * 0.01 + 0.75 * -0.03));
    }

    #[test]
    fn permuting_assets_and_weights_preserves_sample() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let fc = FittedCopula::gaussian(r).unwrap();
        let d = asset_draws(&[normal_step(0.0, 1.0), normal_step(0.1, 2.0)], &fc, 500, 8).unwrap();
        let swapped = DMatrix::from_fn(500, 2, |i, j| d[(i, 1 - j)]);
        let a = portfolio_draws(&d, &WeightSet::new(vec![0.3, 0.7]).unwrap());
        let b = portfolio_draws(&swapped, &WeightSet::new(vec![0.7, 0.3]).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    fn small_panel(t: usize, seed: u64) -> ReturnPanel {
        let spec = MarginalSpec::new(GarchFamily::Garch, InnovationKind::Normal);
        let p = ArmaGarchParams::garch(0.05, 0.08, 0.9);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        simulate_dgp(&DgpSpec {
            marginals: vec![(spec, p), (spec, p)],
            copula: FittedCopula::gaussian(r).unwrap(),
            length: t,
            seed,
            start_date: NaiveDate::from_ymd_opt(2006, 1, 2).unwrap(),
        })
        .unwrap()
    }

    #[test]
    fn grid_counts_and_determinism() {
        let panel = small_panel(202, 4);
        let spec = MarginalSpec::new(GarchFamily::Garch, InnovationKind::Normal);
        let grid = ModelGrid {
            marginals: vec![spec],
            dependence: vec![CopulaFamily::Gaussian, CopulaFamily::Clayton, CopulaFamily::Frank],
            univariate: vec![spec],
        };
        let opts = GridOptions {
            plan: WindowPlan { window_length: 200, step: 1 },
            levels: vec![0.99],
            n_draws: 2000,
            seed: 5,
            allow_unconverged: true,
        };
        let w = vec![WeightSet::equal(2).unwrap()];
        let out = run_grid(&panel, &w, &grid, &opts).unwrap();
        assert_eq!(out.cube.n_cells(), 2 * 4);
        assert!(out.cube.records().all(|r| r.cell.valid && r.cell.es >= r.cell.var));
        let again = run_grid(&panel, &w, &grid, &opts).unwrap();
        assert_eq!(out.cube, again.cube);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| run_grid(&panel, &w, &grid, &opts).unwrap());
        assert_eq!(out.cube, serial.cube);
        assert_eq!(out.cube.realized(1, 0), portfolio_return(&panel, &w[0]).unwrap()[201]);
    }
}
