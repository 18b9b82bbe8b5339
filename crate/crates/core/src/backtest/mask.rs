use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;

use super::{DEGENERATE_REASONS, cc_test, dq_test, duration_test, er_test, BacktestResult, TestKind, BOOTSTRAP_N, DQ_LAGS, TEST_CONFIDENCE};
use crate::data::DATE_FORMAT;
use crate::forecast::{ForecastCube, ModelId};
use crate::rng::derive_seed;
use crate::{Error, Result};

pub const BACKTEST_WINDOW: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskOptions {
    pub window: usize,
    pub conf: f64,
    pub bootstrap_n: usize,
    pub dq_lags: usize,
    pub seed: u64,
}

impl Default for MaskOptions {
    fn default() -> Self {
        Self { window: BACKTEST_WINDOW, conf: TEST_CONFIDENCE, bootstrap_n: BOOTSTRAP_N, dq_lags: DQ_LAGS, seed: 0 }
    }
}

/// Daily candidate sets. The decision for day `d` uses the `window`
/// forecasts and returns of days `d - window .. d`, so it is known before
/// day `d`'s return; days with shorter history carry no decision.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMask {
    test: TestKind,
    dates: Vec<NaiveDate>,
    models: Vec<ModelId>,
    levels: Vec<f64>,
    n_weights: usize,
    window: usize,
    results: Vec<Option<BacktestResult>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskRow {
    pub date: NaiveDate,
    pub model: ModelId,
    pub level: f64,
    pub weights_id: usize,
    pub result: Option<BacktestResult>,
    pub candidate: bool,
}

impl CandidateMask {
    fn index(&self, d: usize, m: usize, l: usize, w: usize) -> usize {
        ((d * self.models.len() + m) * self.levels.len() + l) * self.n_weights + w
    }

    pub fn test(&self) -> TestKind {
        self.test
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn models(&self) -> &[ModelId] {
        &self.models
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn n_weights(&self) -> usize {
        self.n_weights
    }

    /// First cube day that carries a decision.
    pub fn first_day(&self) -> usize {
        self.window
    }

    pub fn result(&self, d: usize, m: usize, l: usize, w: usize) -> Option<BacktestResult> {
        self.results[self.index(d, m, l, w)]
    }

    /// Candidate iff the backtest ran and did not reject.
    pub fn passed(&self, d: usize, m: usize, l: usize, w: usize) -> bool {
        self.result(d, m, l, w).is_some_and(|r| !r.rejected)
    }

    /// Model indices that are candidates on day `d`.
    pub fn candidates(&self, d: usize, l: usize, w: usize) -> Vec<usize> {
        (0..self.models.len()).filter(|&m| self.passed(d, m, l, w)).collect()
    }

    /// Rows for every day that carries a decision.
    pub fn rows(&self) -> impl Iterator<Item = MaskRow> + '_ {
        let (nm, nl, nw) = (self.models.len(), self.levels.len(), self.n_weights);
        (self.window..self.dates.len()).flat_map(move |d| {
            (0..nm).flat_map(move |m| {
                (0..nl).flat_map(move |l| {
                    (0..nw).map(move |w| MaskRow {
                        date: self.dates[d],
                        model: self.models[m],
                        level: self.levels[l],
                        weights_id: w,
                        result: self.result(d, m, l, w),
                        candidate: self.passed(d, m, l, w),
                    })
                })
            })
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wr = csv::Writer::from_path(path)?;
        wr.write_record([
            "date", "marginal", "dependence", "level", "weights_id", "test", "p_value", "rejected", "degenerate", "statistic", "n_hits",
            "reason",
        ])?;
        for row in self.rows() {
            let [p, rej, deg, stat, hits, reason] = match row.result {
                Some(r) => [
                    format!("{}", r.p_value),
                    u8::from(r.rejected).to_string(),
                    u8::from(r.is_degenerate()).to_string(),
                    format!("{}", r.statistic),
                    r.n_hits.to_string(),
                    r.degenerate.unwrap_or("").to_string(),
                ],
                None => ["NA".into(), "1".into(), "0".into(), "NA".into(), "NA".into(), "not tested".into()],
            };
            wr.write_record([
                row.date.format(DATE_FORMAT).to_string(),
                row.model.marginal.to_string(),
                row.model.dependence_label().to_string(),
                format!("{}", row.level),
                row.weights_id.to_string(),
                self.test.to_string(),
                p,
                rej,
                deg,
                stat,
                hits,
                reason,
            ])?;
        }
        wr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a mask written by [`CandidateMask::write_csv`] for the cube it
    /// was computed on.
    pub fn read_csv(path: &Path, cube: &ForecastCube, window: usize) -> Result<Self> {
        let (nd, nm, nl, nw) = (cube.dates().len(), cube.models().len(), cube.levels().len(), cube.n_weights());
        let mut rd = csv::Reader::from_path(path)?;
        let mut test = None;
        let mut mask = CandidateMask {
            test: TestKind::Duration,
            dates: cube.dates().to_vec(),
            models: cube.models().to_vec(),
            levels: cube.levels().to_vec(),
            n_weights: nw,
            window,
            results: vec![None; nd * nm * nl * nw],
        };
        let mut seen = 0usize;
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |what: &str| Error::Parse { path: path.to_path_buf(), row: line, column: String::new(), message: what.to_string() };
            let field = |k: usize| rec.get(k).ok_or_else(|| bad("missing column"));
            let date = NaiveDate::parse_from_str(field(0)?, DATE_FORMAT).map_err(|_| bad("bad date"))?;
            let d = cube.dates().binary_search(&date).map_err(|_| bad("date not in cube"))?;
            let model = ModelId::from_parts(field(1)?, field(2)?)?;
            let m = cube.model_index(&model).ok_or_else(|| bad("model not in cube"))?;
            let level: f64 = field(3)?.parse().map_err(|_| bad("bad level"))?;
            let l = cube.level_index(level).ok_or_else(|| bad("level not in cube"))?;
            let w: usize = field(4)?.parse().map_err(|_| bad("bad weights id"))?;
            if w >= nw || d < window {
                return Err(bad("row outside the mask"));
            }
            let t: TestKind = field(5)?.parse()?;
            if *test.get_or_insert(t) != t {
                return Err(bad("mixed tests"));
            }
            if field(6)? == "NA" {
                seen += 1;
                continue;
            }
            let num = |k: usize| -> Result<f64> { field(k)?.parse().map_err(|_| bad("bad number")) };
            let reason = field(11)?;
            let degenerate = match reason {
                "" => None,
                r => Some(*DEGENERATE_REASONS.iter().find(|x| **x == r).ok_or_else(|| bad("unknown degeneracy"))?),
            };
            let idx = mask.index(d, m, l, w);
            mask.results[idx] = Some(BacktestResult {
                test: t,
                statistic: num(9)?,
                p_value: num(6)?,
                rejected: field(7)? == "1",
                n_hits: field(10)?.parse().map_err(|_| bad("bad hit count"))?,
                degenerate,
            });
            seen += 1;
        }
        if seen != nd.saturating_sub(window) * nm * nl * nw {
            return Err(Error::invalid(format!("{} does not cover the forecast cube", path.display())));
        }
        mask.test = test.ok_or_else(|| Error::invalid(format!("{} is empty", path.display())))?;
        Ok(mask)
    }
}

fn run_one(test: TestKind, r: &[f64], var: &[f64], es: &[f64], level: f64, opts: &MaskOptions, seed: u64) -> Result<BacktestResult> {
    match test {
        TestKind::Duration => duration_test(r, var, 1.0 - level, opts.conf),
        TestKind::Dq => dq_test(r, var, level, opts.dq_lags, opts.conf),
        TestKind::Cc => cc_test(r, var, es, level, opts.conf),
        TestKind::Er => er_test(r, var, es, opts.bootstrap_n, seed, opts.conf),
    }
}

/// Runs `test` on a rolling window for every (day, model, level, weights)
/// series of the cube. A model with an invalid forecast anywhere in the
/// window or on the day itself is not a candidate that day.
pub fn candidate_mask(cube: &ForecastCube, test: TestKind, opts: &MaskOptions) -> Result<CandidateMask> {
    if opts.window < 2 {
        return Err(Error::invalid(format!("backtest window {} too short", opts.window)));
    }
    let (nd, nm, nl, nw) = (cube.dates().len(), cube.models().len(), cube.levels().len(), cube.n_weights());
    let per_day = nm * nl * nw;
    let realized: Vec<Vec<f64>> = (0..nw).map(|w| cube.realized_series(w)).collect();
    let days: Vec<Vec<Option<BacktestResult>>> = (0..nd)
        .into_par_iter()
        .map(|d| {
            let mut out = vec![None; per_day];
            if d < opts.window {
                return Ok(out);
            }
            let span = d - opts.window..d;
            for m in 0..nm {
                for l in 0..nl {
                    for w in 0..nw {
                        if !cube.cell(d, m, l, w).valid {
                            continue;
                        }
                        let cells: Vec<_> = span.clone().map(|t| cube.cell(t, m, l, w)).collect();
                        if cells.iter().any(|c| !c.valid) {
                            continue;
                        }
                        let r = &realized[w][span.clone()];
                        if r.iter().any(|x| !x.is_finite()) {
                            continue;
                        }
                        let var: Vec<f64> = cells.iter().map(|c| c.var).collect();
                        let es: Vec<f64> = cells.iter().map(|c| c.es).collect();
                        let seed = derive_seed(opts.seed, &[d as u64, m as u64, l as u64, w as u64]);
                        out[(m * nl + l) * nw + w] = Some(run_one(test, r, &var, &es, cube.levels()[l], opts, seed)?);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(CandidateMask {
        test,
        dates: cube.dates().to_vec(),
        models: cube.models().to_vec(),
        levels: cube.levels().to_vec(),
        n_weights: nw,
        window: opts.window,
        results: days.into_iter().flatten().collect(),
    })
}
