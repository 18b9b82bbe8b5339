//! Cross-model dispersion of risk forecasts and its aggregation.

mod hac;
mod summary;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::NaiveDate;

pub use hac::{hac_ttest, hac_ttest_periods, long_run_variance, newey_west_lag, HacTest};
pub use summary::{period_summary, write_summary_csv, Period, PeriodSplit, SummaryRow, SummaryStats};

use crate::backtest::CandidateMask;
use crate::forecast::{Cell, ForecastCube};
use crate::stats::quantile_linear;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    Mad,
    Sd,
    Iqr,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Mad, Measure::Sd, Measure::Iqr];

    pub fn label(self) -> &'static str {
        match self {
            Measure::Mad => "mad",
            Measure::Sd => "sd",
            Measure::Iqr => "iqr",
        }
    }
}

/// Which forecast of a cell is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RiskKind {
    Var,
    Es,
}

impl RiskKind {
    pub fn label(self) -> &'static str {
        match self {
            RiskKind::Var => "var",
            RiskKind::Es => "es",
        }
    }

    pub fn of(self, cell: &Cell) -> f64 {
        match self {
            RiskKind::Var => cell.var,
            RiskKind::Es => cell.es,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Copula fixed, marginal specification varying; averaged over copulas.
    G1,
    /// Marginal fixed, copula varying; averaged over marginals.
    G2,
    /// All multivariate models.
    G3,
    /// All univariate models.
    G4,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::G1, Group::G2, Group::G3, Group::G4];

    pub fn label(self) -> &'static str {
        match self {
            Group::G1 => "G1",
            Group::G2 => "G2",
            Group::G3 => "G3",
            Group::G4 => "G4",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Group::G1 => "fixed copula, varying marginal",
            Group::G2 => "fixed marginal, varying copula",
            Group::G3 => "all multivariate models",
            Group::G4 => "all univariate models",
        }
    }

    /// Model indices of the cube partitioned into the group's sets.
    pub fn sets(self, cube: &ForecastCube) -> Vec<Vec<usize>> {
        let models = cube.models();
        let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, m) in models.iter().enumerate() {
            let key = match (self, m.dependence) {
                (Group::G1, Some(d)) => d.label().to_string(),
                (Group::G2, Some(_)) => m.marginal.to_string(),
                (Group::G3, Some(_)) => String::new(),
                (Group::G4, None) => String::new(),
                _ => continue,
            };
            map.entry(key).or_default().push(i);
        }
        map.into_values().collect()
    }
}

macro_rules! label_enum {
    ($t:ty, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .into_iter()
                    .find(|x| x.label().eq_ignore_ascii_case(s))
                    .ok_or_else(|| Error::invalid(format!(concat!("unknown ", $what, " '{}'"), s)))
            }
        }
    };
}

label_enum!(Measure, "dispersion measure");
label_enum!(Group, "model group");

impl RiskKind {
    pub const ALL: [RiskKind; 2] = [RiskKind::Var, RiskKind::Es];
}
label_enum!(RiskKind, "risk measure");

/// Cross-model dispersion of one day's forecasts.
pub fn dispersion(xs: &[f64], measure: Measure) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("dispersion of an empty set"));
    }
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index: i });
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    Ok(match measure {
        Measure::Mad => xs.iter().map(|x| (x - m).abs()).sum::<f64>() / n,
        Measure::Sd if xs.len() < 2 => 0.0,
        Measure::Sd => (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt(),
        Measure::Iqr => quantile_linear(xs, 0.75) - quantile_linear(xs, 0.25),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRiskSeries {
    pub dates: Vec<NaiveDate>,
    pub measure: Measure,
    /// `None` when no set had two surviving models.
    pub values: Vec<Option<f64>>,
    /// Surviving models in the group on each day.
    pub n_models: Vec<usize>,
}

impl ModelRiskSeries {
    pub fn present(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn mean(&self) -> Option<f64> {
        let v = self.present();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// What to measure: one risk figure of one portfolio at one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskQuery {
    pub group: Group,
    pub level: f64,
    pub weights_id: usize,
    pub kind: RiskKind,
    pub measure: Measure,
}

/// Daily model risk over the days that carry a candidate decision; a model
/// counts on a day iff its cell is valid and it passed the backtest.
pub fn daily_model_risk(cube: &ForecastCube, mask: Option<&CandidateMask>, q: &RiskQuery) -> Result<ModelRiskSeries> {
    let l = level_index(cube, q.level)?;
    match mask {
        Some(mask) => {
            if mask.dates() != cube.dates() || mask.models() != cube.models() || mask.n_weights() != cube.n_weights() {
                return Err(Error::invalid("candidate mask does not match the forecast cube"));
            }
            let ml = mask
                .levels()
                .iter()
                .position(|&x| x == q.level)
                .ok_or_else(|| Error::invalid(format!("level {} not in candidate mask", q.level)))?;
            daily_model_risk_with(cube, mask.first_day()..cube.dates().len(), q, |d, m| {
                cube.cell(d, m, l, q.weights_id).valid && mask.passed(d, m, ml, q.weights_id)
            })
        }
        None => daily_model_risk_with(cube, 0..cube.dates().len(), q, |d, m| cube.cell(d, m, l, q.weights_id).valid),
    }
}

/// As [`daily_model_risk`] with an arbitrary survivor predicate `keep(day, model)`.
pub fn daily_model_risk_with<F>(cube: &ForecastCube, days: Range<usize>, q: &RiskQuery, keep: F) -> Result<ModelRiskSeries>
where
    F: Fn(usize, usize) -> bool,
{
    let l = level_index(cube, q.level)?;
    if q.weights_id >= cube.n_weights() {
        return Err(Error::invalid(format!("weights id {} out of range", q.weights_id)));
    }
    if days.end > cube.dates().len() {
        return Err(Error::invalid("day range beyond the cube"));
    }
    let sets = q.group.sets(cube);
    let mut out = ModelRiskSeries { dates: Vec::new(), measure: q.measure, values: Vec::new(), n_models: Vec::new() };
    for d in days {
        let mut per_set = Vec::new();
        let mut n = 0;
        for set in &sets {
            let xs: Vec<f64> = set
                .iter()
                .filter(|&&m| keep(d, m))
                .map(|&m| q.kind.of(&cube.cell(d, m, l, q.weights_id)))
                .collect();
            n += xs.len();
            if xs.len() >= 2 {
                per_set.push(dispersion(&xs, q.measure)?);
            }
        }
        out.dates.push(cube.dates()[d]);
        out.n_models.push(n);
        out.values
            .push((!per_set.is_empty()).then(|| per_set.iter().sum::<f64>() / per_set.len() as f64));
    }
    Ok(out)
}

fn level_index(cube: &ForecastCube, level: f64) -> Result<usize> {
    cube.level_index(level)
        .ok_or_else(|| Error::invalid(format!("level {level} not in forecast cube")))
}

/// Daily lower/upper percentiles of the surviving forecasts of a group.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentileBand {
    pub date: NaiveDate,
    pub lower: f64,
    pub upper: f64,
    pub n_models: usize,
}

/// Percentile band (linear interpolation) of one day's surviving forecasts
/// across all models of `q.group`; days with no survivor are skipped.
pub fn percentile_bands(
    cube: &ForecastCube,
    mask: Option<&CandidateMask>,
    q: &RiskQuery,
    lower: f64,
    upper: f64,
) -> Result<Vec<PercentileBand>> {
    let members: Vec<usize> = q.group.sets(cube).into_iter().flatten().collect();
    percentile_bands_of(cube, mask, q, &members, lower, upper)
}

/// As [`percentile_bands`] over an explicit set of model indices.
pub fn percentile_bands_of(
    cube: &ForecastCube,
    mask: Option<&CandidateMask>,
    q: &RiskQuery,
    members: &[usize],
    lower: f64,
    upper: f64,
) -> Result<Vec<PercentileBand>> {
    if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower > upper {
        return Err(Error::invalid(format!("bad percentile pair ({lower}, {upper})")));
    }
    let l = level_index(cube, q.level)?;
    let (start, ml) = match mask {
        Some(m) => (
            m.first_day(),
            Some(m.levels().iter().position(|&x| x == q.level).ok_or_else(|| Error::invalid("level not in mask"))?),
        ),
        None => (0, None),
    };
    let mut out = Vec::new();
    for d in start..cube.dates().len() {
        let xs: Vec<f64> = members
            .iter()
            .filter(|&&m| {
                cube.cell(d, m, l, q.weights_id).valid && mask.zip(ml).is_none_or(|(mk, ml)| mk.passed(d, m, ml, q.weights_id))
            })
            .map(|&m| q.kind.of(&cube.cell(d, m, l, q.weights_id)))
            .collect();
        if xs.is_empty() {
            continue;
        }
        out.push(PercentileBand {
            date: cube.dates()[d],
            lower: quantile_linear(&xs, lower),
            upper: quantile_linear(&xs, upper),
            n_models: xs.len(),
        });
    }
    Ok(out)
}
