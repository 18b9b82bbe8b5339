//! Monte-Carlo portfolio VaR/ES forecasts over a model grid and rolling
//! windows, stored in a dense (date x model x level x weight set) cube.

mod clean;
mod engine;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;

pub use clean::{clean_outliers, scale_dollar, BURN_IN, Z_CAP};
pub use engine::{
    asset_draws, run_grid, simulate_portfolio_sample, var_es_from_sample, CopulaFitRecord, GridOptions, GridOutput,
    MarginalFitRecord, ModelGrid,
};

use crate::copulas::CopulaFamily;
use crate::data::DATE_FORMAT;
use crate::marginals::MarginalSpec;
use crate::{Error, Result};

pub const SUPPORTED_LEVELS: [f64; 4] = [0.95, 0.975, 0.99, 0.999];
pub const DEFAULT_DRAWS: usize = 10_000;
pub const UNIVARIATE_TAG: &str = "univariate";

pub fn check_level(level: f64) -> Result<()> {
    if SUPPORTED_LEVELS.contains(&level) {
        Ok(())
    } else {
        Err(Error::invalid(format!("confidence level {level} not in {SUPPORTED_LEVELS:?}")))
    }
}

/// A marginal specification combined with a dependence family, or a
/// univariate model of the portfolio series (`dependence = None`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelId {
    pub marginal: MarginalSpec,
    pub dependence: Option<CopulaFamily>,
}

impl ModelId {
    pub fn multivariate(marginal: MarginalSpec, dependence: CopulaFamily) -> Self {
        Self { marginal, dependence: Some(dependence) }
    }

    pub fn univariate(marginal: MarginalSpec) -> Self {
        Self { marginal, dependence: None }
    }

    pub fn is_univariate(&self) -> bool {
        self.dependence.is_none()
    }

    pub fn dependence_label(&self) -> &'static str {
        self.dependence.map_or(UNIVARIATE_TAG, CopulaFamily::label)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.marginal, self.dependence_label())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (m, d) = s
            .split_once('/')
            .ok_or_else(|| Error::invalid(format!("model id `{s}` is not of the form marginal/dependence")))?;
        Self::from_parts(m, d)
    }
}

impl ModelId {
    pub fn from_parts(marginal: &str, dependence: &str) -> Result<Self> {
        let m: MarginalSpec = marginal.parse()?;
        if dependence == UNIVARIATE_TAG {
            Ok(Self::univariate(m))
        } else {
            Ok(Self::multivariate(m, dependence.parse()?))
        }
    }
}

/// Why a cell is invalid (or, for `Cleaned`, why its value was replaced).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reason {
    #[default]
    None,
    MarginalFit,
    Unconverged,
    DependenceFit,
    Simulation,
    Cleaned,
}

impl Reason {
    pub fn label(self) -> &'static str {
        match self {
            Reason::None => "",
            Reason::MarginalFit => "marginal_fit",
            Reason::Unconverged => "unconverged",
            Reason::DependenceFit => "dependence_fit",
            Reason::Simulation => "simulation",
            Reason::Cleaned => "cleaned",
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        use Reason::*;
        [None, MarginalFit, Unconverged, DependenceFit, Simulation, Cleaned]
            .into_iter()
            .find(|r| r.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub var: f64,
    pub es: f64,
    pub valid: bool,
    pub reason: Reason,
}

impl Cell {
    pub fn ok(var: f64, es: f64) -> Self {
        Self { var, es, valid: true, reason: Reason::None }
    }

    pub fn failed(reason: Reason) -> Self {
        Self { var: f64::NAN, es: f64::NAN, valid: false, reason }
    }
}

/// One long-format row of the cube.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub date: NaiveDate,
    pub model: ModelId,
    pub level: f64,
    pub weights_id: usize,
    pub cell: Cell,
}

/// Dense array of forecasts over (date x model x level x weight set), plus
/// the realized portfolio return on each target date.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCube {
    dates: Vec<NaiveDate>,
    models: Vec<ModelId>,
    levels: Vec<f64>,
    n_weights: usize,
    cells: Vec<Cell>,
    /// dates x weights, `NaN` when unknown.
    realized: Vec<f64>,
}

impl ForecastCube {
    pub fn new(dates: Vec<NaiveDate>, models: Vec<ModelId>, levels: Vec<f64>, n_weights: usize) -> Result<Self> {
        for l in &levels {
            check_level(*l)?;
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("cube dates must be strictly increasing"));
        }
        let n = dates.len() * models.len() * levels.len() * n_weights;
        let realized = vec![f64::NAN; dates.len() * n_weights];
        Ok(Self { dates, models, levels, n_weights, cells: vec![Cell::failed(Reason::Simulation); n], realized })
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

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    fn index(&self, d: usize, m: usize, l: usize, w: usize) -> usize {
        ((d * self.models.len() + m) * self.levels.len() + l) * self.n_weights + w
    }

    pub fn cell(&self, d: usize, m: usize, l: usize, w: usize) -> Cell {
        self.cells[self.index(d, m, l, w)]
    }

    pub fn set_cell(&mut self, d: usize, m: usize, l: usize, w: usize, cell: Cell) {
        let i = self.index(d, m, l, w);
        self.cells[i] = cell;
    }

    pub fn realized(&self, d: usize, w: usize) -> f64 {
        self.realized[d * self.n_weights + w]
    }

    pub fn set_realized(&mut self, d: usize, w: usize, r: f64) {
        self.realized[d * self.n_weights + w] = r;
    }

    pub fn model_index(&self, m: &ModelId) -> Option<usize> {
        self.models.iter().position(|x| x == m)
    }

    pub fn level_index(&self, level: f64) -> Option<usize> {
        self.levels.iter().position(|&x| x == level)
    }

    /// Realized returns of weight set `w` over all dates.
    pub fn realized_series(&self, w: usize) -> Vec<f64> {
        (0..self.dates.len()).map(|d| self.realized(d, w)).collect()
    }

    /// Cells of one (model, level, weight) series over all dates.
    pub fn series(&self, m: usize, l: usize, w: usize) -> Vec<Cell> {
        (0..self.dates.len()).map(|d| self.cell(d, m, l, w)).collect()
    }

    /// Restricts the cube to a subset of models (in the given order).
    pub fn select_models(&self, keep: &[ModelId]) -> Result<Self> {
        let idx: Vec<usize> = keep
            .iter()
            .map(|m| self.model_index(m).ok_or_else(|| Error::invalid(format!("model {m} not in cube"))))
            .collect::<Result<_>>()?;
        let mut out = Self::new(self.dates.clone(), keep.to_vec(), self.levels.clone(), self.n_weights)?;
        out.realized = self.realized.clone();
        for d in 0..self.dates.len() {
            for (mi, &m) in idx.iter().enumerate() {
                for l in 0..self.levels.len() {
                    for w in 0..self.n_weights {
                        out.set_cell(d, mi, l, w, self.cell(d, m, l, w));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn records(&self) -> impl Iterator<Item = ForecastRecord> + '_ {
        let (nm, nl, nw) = (self.models.len(), self.levels.len(), self.n_weights);
        (0..self.cells.len()).map(move |i| {
            let w = i % nw;
            let l = (i / nw) % nl;
            let m = (i / (nw * nl)) % nm;
            let d = i / (nw * nl * nm);
            ForecastRecord { date: self.dates[d], model: self.models[m], level: self.levels[l], weights_id: w, cell: self.cells[i] }
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "marginal", "dependence", "level", "weights_id", "var", "es", "valid", "reason"])?;
        for r in self.records() {
            w.write_record([
                r.date.format(DATE_FORMAT).to_string(),
                r.model.marginal.to_string(),
                r.model.dependence_label().to_string(),
                r.level.to_string(),
                r.weights_id.to_string(),
                fmt_num(r.cell.var),
                fmt_num(r.cell.es),
                (r.cell.valid as u8).to_string(),
                r.cell.reason.label().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn write_realized_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "weights_id", "return"])?;
        for (d, date) in self.dates.iter().enumerate() {
            for k in 0..self.n_weights {
                w.write_record([date.format(DATE_FORMAT).to_string(), k.to_string(), fmt_num(self.realized(d, k))])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a cube CSV written by [`ForecastCube::write_csv`] and, if given,
    /// the realized-return CSV.
    pub fn read_csv(path: &Path, realized: Option<&Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        let mut models: Vec<ModelId> = Vec::new();
        let mut dates = BTreeSet::new();
        let mut levels: Vec<f64> = Vec::new();
        let mut n_weights = 0;
        let perr = |row: usize, column: &str, message: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            column: column.into(),
            message,
        };
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let field = |j: usize, name: &str| rec.get(j).ok_or_else(|| perr(row, name, "missing column".into()));
            let date = NaiveDate::parse_from_str(field(0, "date")?, DATE_FORMAT)
                .map_err(|e| perr(row, "date", e.to_string()))?;
            let model = ModelId::from_parts(field(1, "marginal")?, field(2, "dependence")?)
                .map_err(|e| perr(row, "model", e.to_string()))?;
            let level: f64 = field(3, "level")?.parse().map_err(|_| perr(row, "level", "not a number".into()))?;
            let wid: usize = field(4, "weights_id")?
                .parse()
                .map_err(|_| perr(row, "weights_id", "not an integer".into()))?;
            let var = parse_num(field(5, "var")?).ok_or_else(|| perr(row, "var", "not a number".into()))?;
            let es = parse_num(field(6, "es")?).ok_or_else(|| perr(row, "es", "not a number".into()))?;
            let valid = field(7, "valid")? == "1";
            let reason = Reason::from_label(field(8, "reason")?).ok_or_else(|| perr(row, "reason", "unknown reason".into()))?;
            if !models.contains(&model) {
                models.push(model);
            }
            if !levels.contains(&level) {
                levels.push(level);
            }
            n_weights = n_weights.max(wid + 1);
            dates.insert(date);
            rows.push((date, model, level, wid, Cell { var, es, valid, reason }));
        }
        levels.sort_by(f64::total_cmp);
        let dates: Vec<NaiveDate> = dates.into_iter().collect();
        let mut cube = Self::new(dates, models, levels, n_weights)?;
        if rows.len() != cube.n_cells() {
            return Err(Error::invalid(format!("cube file has {} rows, expected {}", rows.len(), cube.n_cells())));
        }
        for (date, model, level, w, cell) in rows {
            let d = cube.dates.binary_search(&date).expect("date collected above");
            let m = cube.model_index(&model).expect("model collected above");
            let l = cube.level_index(level).expect("level collected above");
            cube.set_cell(d, m, l, w, cell);
        }
        if let Some(rp) = realized {
            let mut rdr = csv::Reader::from_path(rp)?;
            for rec in rdr.records() {
                let rec = rec?;
                let bad = || Error::invalid(format!("{}: malformed realized-return row", rp.display()));
                let date = NaiveDate::parse_from_str(rec.get(0).ok_or_else(bad)?, DATE_FORMAT).map_err(|_| bad())?;
                let w: usize = rec.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
                let r = parse_num(rec.get(2).ok_or_else(bad)?).ok_or_else(bad)?;
                let d = cube.dates.binary_search(&date).map_err(|_| bad())?;
                if w >= cube.n_weights {
                    return Err(bad());
                }
                cube.set_realized(d, w, r);
            }
        }
        Ok(cube)
    }
}

pub(crate) fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "NA".to_string()
    } else {
        x.to_string()
    }
}

pub(crate) fn parse_num(s: &str) -> Option<f64> {
    if s == "NA" {
        Some(f64::NAN)
    } else {
        s.parse().ok()
    }
}
