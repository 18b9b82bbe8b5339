use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;

use super::{es_loss, mcs, var_loss, LossMatrix, McsConfig, McsResult};
use crate::backtest::CandidateMask;
use crate::data::DATE_FORMAT;
use crate::forecast::ForecastCube;
use crate::modelrisk::RiskKind;
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McsOptions {
    pub cadence: usize,
    pub window: usize,
    pub kind: RiskKind,
    pub config: McsConfig,
}

impl Default for McsOptions {
    fn default() -> Self {
        Self { cadence: 20, window: 500, kind: RiskKind::Var, config: McsConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsRun {
    /// Cube day on which the run is made; losses come from the preceding window.
    pub day: usize,
    pub date: NaiveDate,
    /// Cube model indices entering the run; `result` indexes into this.
    pub models: Vec<usize>,
    pub loss_means: Vec<f64>,
    pub result: McsResult,
}

impl McsRun {
    pub fn survivors(&self) -> impl Iterator<Item = usize> + '_ {
        self.result.survivors.iter().map(|&i| self.models[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsSchedule {
    pub level: f64,
    pub weights_id: usize,
    pub kind: RiskKind,
    pub runs: Vec<McsRun>,
    n_days: usize,
}

impl McsSchedule {
    /// Days covered by some run.
    pub fn days(&self) -> std::ops::Range<usize> {
        self.runs.first().map_or(self.n_days..self.n_days, |r| r.day..self.n_days)
    }

    /// The run in force on day `d`.
    pub fn run_for(&self, d: usize) -> Option<&McsRun> {
        let k = self.runs.partition_point(|r| r.day <= d);
        k.checked_sub(1).map(|k| &self.runs[k])
    }

    /// Whether model `m` belongs to the confidence set in force on day `d`.
    pub fn keep(&self, d: usize, m: usize) -> bool {
        self.run_for(d).is_some_and(|r| r.survivors().any(|s| s == m))
    }

    pub fn write_csv(&self, path: &Path, cube: &ForecastCube) -> Result<()> {
        let mut wr = csv::Writer::from_path(path)?;
        wr.write_record([
            "run_date", "marginal", "dependence", "level", "weights_id", "risk", "loss_mean", "mcs_p_value", "survived",
            "elimination_rank",
        ])?;
        for run in &self.runs {
            for (i, &m) in run.models.iter().enumerate() {
                let id = cube.models()[m];
                wr.write_record([
                    run.date.format(DATE_FORMAT).to_string(),
                    id.marginal.to_string(),
                    id.dependence_label().to_string(),
                    format!("{}", self.level),
                    self.weights_id.to_string(),
                    self.kind.to_string(),
                    format!("{}", run.loss_means[i]),
                    format!("{}", run.result.p_values[i]),
                    u8::from(run.result.survived(i)).to_string(),
                    run.result.elimination_rank(i).map_or(String::new(), |k| k.to_string()),
                ])?;
            }
        }
        wr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn losses_of(cube: &ForecastCube, m: usize, l: usize, w: usize, span: std::ops::Range<usize>, kind: RiskKind) -> Option<Vec<f64>> {
    let alpha = 1.0 - cube.levels()[l];
    span.map(|t| {
        let c = cube.cell(t, m, l, w);
        let r = cube.realized(t, w);
        if !c.valid || !r.is_finite() {
            return None;
        }
        match kind {
            RiskKind::Var => Some(var_loss(r, c.var, alpha)),
            RiskKind::Es => es_loss(c.var, c.es, r, alpha).ok(),
        }
        .filter(|x| x.is_finite())
    })
    .collect()
}

/// Runs the confidence set every `cadence` days on the models that are
/// backtest candidates that day (all valid models without a mask), scoring
/// the trailing `window` days. Models lacking a complete loss history are
/// left out of the run.
pub fn mcs_schedule(
    cube: &ForecastCube,
    mask: Option<&CandidateMask>,
    level: f64,
    weights_id: usize,
    opts: &McsOptions,
) -> Result<McsSchedule> {
    if opts.cadence == 0 || opts.window == 0 {
        return Err(Error::invalid("MCS cadence and window must be positive"));
    }
    let l = cube.level_index(level).ok_or_else(|| Error::invalid(format!("level {level} not in forecast cube")))?;
    if weights_id >= cube.n_weights() {
        return Err(Error::invalid(format!("weights id {weights_id} out of range")));
    }
    let ml = match mask {
        Some(mk) => {
            if mk.dates() != cube.dates() || mk.models() != cube.models() {
                return Err(Error::invalid("candidate mask does not match the forecast cube"));
            }
            Some(mk.levels().iter().position(|&x| x == level).ok_or_else(|| Error::invalid("level not in mask"))?)
        }
        None => None,
    };
    let nd = cube.dates().len();
    let start = opts.window.max(mask.map_or(0, |m| m.first_day()));
    let run_days: Vec<usize> = (start..nd).step_by(opts.cadence).collect();
    let kind_key = match opts.kind {
        RiskKind::Var => 0,
        RiskKind::Es => 1,
    };
    let runs = run_days
        .into_par_iter()
        .map(|d| {
            let candidates: Vec<usize> = match (mask, ml) {
                (Some(mk), Some(ml)) => mk.candidates(d, ml, weights_id),
                _ => (0..cube.models().len()).filter(|&m| cube.cell(d, m, l, weights_id).valid).collect(),
            };
            let span = d - opts.window..d;
            let mut models = Vec::new();
            let mut cols = Vec::new();
            for m in candidates {
                if let Some(c) = losses_of(cube, m, l, weights_id, span.clone(), opts.kind) {
                    models.push(m);
                    cols.push(c);
                }
            }
            let loss_means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            let result = if models.len() < 2 {
                McsResult::all_survive(models.len())
            } else {
                let cfg = McsConfig {
                    seed: derive_seed(opts.config.seed, &[d as u64, l as u64, weights_id as u64, kind_key]),
                    ..opts.config
                };
                mcs(&LossMatrix::new(cols)?, &cfg)?
            };
            Ok(McsRun { day: d, date: cube.dates()[d], models, loss_means, result })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McsSchedule { level, weights_id, kind: opts.kind, runs, n_days: nd })
}
