use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use super::{Group, Measure, ModelRiskSeries, RiskKind};
use crate::forecast::scale_dollar;
use crate::stats::quantile_linear;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Period {
    PreCrisis,
    Crisis,
    PostCrisis,
    Overall,
}

impl Period {
    pub const ALL: [Period; 4] = [Period::PreCrisis, Period::Crisis, Period::PostCrisis, Period::Overall];

    pub fn label(self) -> &'static str {
        match self {
            Period::PreCrisis => "pre_crisis",
            Period::Crisis => "crisis",
            Period::PostCrisis => "post_crisis",
            Period::Overall => "overall",
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Calendar-year split: before `crisis_first`, `crisis_first..=crisis_last`, after.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodSplit {
    pub crisis_first: i32,
    pub crisis_last: i32,
}

impl Default for PeriodSplit {
    fn default() -> Self {
        Self { crisis_first: 2008, crisis_last: 2009 }
    }
}

impl PeriodSplit {
    pub fn period_of(&self, date: NaiveDate) -> Period {
        let y = date.year();
        if y < self.crisis_first {
            Period::PreCrisis
        } else if y <= self.crisis_last {
            Period::Crisis
        } else {
            Period::PostCrisis
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub n: usize,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
    pub sd: f64,
}

impl SummaryStats {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            n,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            median: quantile_linear(xs, 0.5),
            mean,
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            sd,
        })
    }
}

/// Summary statistics of the present values in each period and overall.
/// Periods without values are omitted.
pub fn period_summary(series: &ModelRiskSeries, split: &PeriodSplit) -> Vec<(Period, SummaryStats)> {
    let mut out = Vec::new();
    for p in Period::ALL {
        let xs: Vec<f64> = series
            .dates
            .iter()
            .zip(&series.values)
            .filter(|(d, _)| p == Period::Overall || split.period_of(**d) == p)
            .filter_map(|(_, v)| *v)
            .collect();
        match SummaryStats::of(&xs) {
            Some(s) => out.push((p, s)),
            None => log::info!("period {p} has no model-risk values; omitted"),
        }
    }
    out
}

/// One line of a model-risk summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub kind: RiskKind,
    pub level: f64,
    pub group: Group,
    pub measure: Measure,
    pub weights_id: usize,
    /// Name of the candidate filter (backtest, `none`, or `mcs`).
    pub selection: String,
    pub period: Period,
    pub stats: SummaryStats,
}

/// Writes rows in percent of portfolio value, with the mean also scaled to
/// dollars for `portfolio_value` over `horizon_days`.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow], portfolio_value: f64, horizon_days: u32) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    wr.write_record([
        "risk", "level", "group", "measure", "weights_id", "selection", "period", "n_days", "Min", "Median", "Mean", "Max", "SD",
        "MeanDollar",
    ])?;
    let pct = |x: f64| format!("{:.6}", 100.0 * x);
    for r in rows {
        let s = &r.stats;
        wr.write_record([
            r.kind.to_string(),
            format!("{}", r.level),
            r.group.to_string(),
            r.measure.to_string(),
            r.weights_id.to_string(),
            r.selection.clone(),
            r.period.to_string(),
            s.n.to_string(),
            pct(s.min),
            pct(s.median),
            pct(s.mean),
            pct(s.max),
            pct(s.sd),
            format!("{:.2}", scale_dollar(s.mean, portfolio_value, horizon_days)?),
        ])?;
    }
    wr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
