//! Return panels, portfolio weights, rolling windows and synthetic
//! copula-GARCH panels.

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand_distr::{Distribution, Exp1};

use crate::copulas::FittedCopula;
use crate::marginals::{simulate_path, ArmaGarchParams, MarginalSpec};
use crate::rng::{child_rng, rng_from_seed};
use crate::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Dated T x K matrix of simple returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    returns: DMatrix<f64>,
    asset_names: Vec<String>,
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, returns: DMatrix<f64>, asset_names: Vec<String>) -> Result<Self> {
        if dates.is_empty() || asset_names.is_empty() {
            return Err(Error::invalid("panel needs at least one date and one asset"));
        }
        if returns.nrows() != dates.len() {
            return Err(Error::Dimension { expected: dates.len(), got: returns.nrows() });
        }
        if returns.ncols() != asset_names.len() {
            return Err(Error::Dimension { expected: asset_names.len(), got: returns.ncols() });
        }
        if let Some(i) = dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("dates not strictly increasing at row {}", i + 1)));
        }
        if let Some(i) = returns.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self { dates, returns, asset_names })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn asset_names(&self) -> &[String] {
        &self.asset_names
    }

    pub fn n_obs(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.asset_names.len()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.returns.column(k).iter().copied().collect()
    }

    /// Rows `[start, end)` as a new panel.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_obs() {
            return Err(Error::invalid(format!("bad slice [{start}, {end}) of {} rows", self.n_obs())));
        }
        Self::new(
            self.dates[start..end].to_vec(),
            self.returns.rows(start, end - start).into_owned(),
            self.asset_names.clone(),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.asset_names.iter().cloned());
        w.write_record(&header)?;
        for (t, d) in self.dates.iter().enumerate() {
            let mut rec = vec![d.format(DATE_FORMAT).to_string()];
            rec.extend(self.returns.row(t).iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesFormat {
    Prices,
    Returns,
}

impl std::str::FromStr for SeriesFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prices" => Ok(SeriesFormat::Prices),
            "returns" => Ok(SeriesFormat::Returns),
            _ => Err(Error::invalid(format!("unknown series format `{s}`"))),
        }
    }
}

/// Reads a dated CSV panel. With `Prices`, row t of the result holds
/// `(P_t - P_{t-1}) / P_{t-1}` and the first price row is consumed.
pub fn load_returns(path: &Path, format: SeriesFormat) -> Result<ReturnPanel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file);
    let parse_err = |row: usize, column: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("date") {
        return Err(parse_err(1, header.first().map_or("", |s| s), "first column must be `date`".into()));
    }
    let names: Vec<String> = header[1..].to_vec();
    if names.is_empty() {
        return Err(parse_err(1, "", "no asset columns".into()));
    }
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let date_str = rec.get(0).unwrap_or("");
        let d = NaiveDate::parse_from_str(date_str, DATE_FORMAT)
            .map_err(|e| parse_err(row, "date", format!("malformed date `{date_str}`: {e}")))?;
        if let Some(prev) = dates.last() {
            if *prev == d {
                return Err(parse_err(row, "date", format!("duplicate date {d}")));
            }
            if *prev > d {
                return Err(parse_err(row, "date", format!("date {d} out of order")));
            }
        }
        dates.push(d);
        for (k, name) in names.iter().enumerate() {
            let cell = rec
                .get(k + 1)
                .ok_or_else(|| parse_err(row, name, "missing column".into()))?;
            if cell.is_empty() {
                return Err(parse_err(row, name, "blank cell".into()));
            }
            let x: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, name, format!("non-numeric cell `{cell}`")))?;
            if !x.is_finite() {
                return Err(parse_err(row, name, format!("non-finite cell `{cell}`")));
            }
            if format == SeriesFormat::Prices && x <= 0.0 {
                return Err(parse_err(row, name, format!("price {x} not positive")));
            }
            values.push(x);
        }
        if rec.len() > names.len() + 1 {
            return Err(parse_err(row, "", format!("{} fields, header has {}", rec.len(), names.len() + 1)));
        }
    }
    let k = names.len();
    let t = dates.len();
    let raw = DMatrix::from_row_slice(t, k, &values);
    match format {
        SeriesFormat::Returns => ReturnPanel::new(dates, raw, names),
        SeriesFormat::Prices => {
            if t < 2 {
                return Err(Error::TooShort { need: 2, got: t });
            }
            let r = DMatrix::from_fn(t - 1, k, |i, j| (raw[(i + 1, j)] - raw[(i, j)]) / raw[(i, j)]);
            ReturnPanel::new(dates[1..].to_vec(), r, names)
        }
    }
}

/// Non-negative portfolio weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet(Vec<f64>);

impl WeightSet {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("empty weight set"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {s}, not 1")));
        }
        Ok(Self(weights))
    }

    pub fn equal(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("empty weight set"));
        }
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `r_pf,t = sum_k w_k r_{k,t}`.
pub fn portfolio_return(panel: &ReturnPanel, w: &WeightSet) -> Result<Vec<f64>> {
    if w.len() != panel.n_assets() {
        return Err(Error::Dimension { expected: panel.n_assets(), got: w.len() });
    }
    Ok(panel
        .returns
        .row_iter()
        .map(|row| row.iter().zip(w.as_slice()).map(|(r, w)| r * w).sum())
        .collect())
}

/// `n` weight sets uniform on the unit simplex, by normalised exponential
/// spacings.
pub fn sample_simplex_weights(k: usize, n: usize, seed: u64) -> Result<Vec<WeightSet>> {
    if k == 0 || n == 0 {
        return Err(Error::invalid("need k >= 1 and n >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let e: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
            let s: f64 = e.iter().sum();
            WeightSet::new(e.into_iter().map(|x| x / s).collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowPlan {
    pub window_length: usize,
    pub step: usize,
}

impl Default for WindowPlan {
    fn default() -> Self {
        Self { window_length: 500, step: 1 }
    }
}

impl WindowPlan {
    pub fn validate(&self) -> Result<()> {
        if self.window_length < 2 || self.step < 1 {
            return Err(Error::invalid(format!("bad window plan {self:?}")));
        }
        Ok(())
    }
}

/// An estimation window `[start, end)` whose one-day-ahead target is `end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    /// False when `end` lies past the last observation.
    pub in_sample: bool,
}

impl Window {
    pub fn target(&self) -> usize {
        self.end
    }
}

pub fn rolling_windows(t: usize, plan: WindowPlan) -> Result<Vec<Window>> {
    plan.validate()?;
    if t < plan.window_length {
        return Err(Error::TooShort { need: plan.window_length, got: t });
    }
    Ok((0..=t - plan.window_length)
        .step_by(plan.step)
        .map(|start| {
            let end = start + plan.window_length;
            Window { start, end, in_sample: end < t }
        })
        .collect())
}

/// Consecutive weekdays starting at (or after) `start`.
pub fn weekday_dates(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Known copula-GARCH data-generating process.
#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub marginals: Vec<(MarginalSpec, ArmaGarchParams)>,
    pub copula: FittedCopula,
    pub length: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.marginals.len() != self.copula.dim() {
            return Err(Error::Dimension { expected: self.copula.dim(), got: self.marginals.len() });
        }
        for (spec, p) in &self.marginals {
            p.validate(spec)?;
        }
        if self.length == 0 {
            return Err(Error::invalid("DGP length must be positive"));
        }
        Ok(())
    }
}

/// Simulates a panel: copula uniforms, mapped through each asset's
/// innovation quantile, drive the ARMA-GARCH recursion started at the
/// unconditional variance.
pub fn simulate_dgp(spec: &DgpSpec) -> Result<ReturnPanel> {
    spec.validate()?;
    let t = spec.length;
    let mut rng = child_rng(spec.seed, &[0]);
    let u = spec.copula.simulate_with(t, &mut rng)?;
    let k = spec.marginals.len();
    let mut returns = DMatrix::zeros(t, k);
    for (j, (ms, p)) in spec.marginals.iter().enumerate() {
        let dist = p.innovation(ms.innovation)?;
        let z: Vec<f64> = u.column(j).iter().map(|&x| dist.quantile(x)).collect::<Result<_>>()?;
        let path = simulate_path(p, ms, &z)?;
        returns.set_column(j, &nalgebra::DVector::from_vec(path));
    }
    let names = (1..=k).map(|i| format!("asset{i}")).collect();
    ReturnPanel::new(weekday_dates(spec.start_date, t), returns, names)
}
