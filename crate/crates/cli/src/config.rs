//! Versioned TOML run configuration.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use riskgrid::backtest::TestKind;
use riskgrid::copulas::CopulaFamily;
use riskgrid::forecast::{check_level, ModelGrid};
use riskgrid::marginals::{ArmaGarchParams, MarginalSpec};
use riskgrid::modelrisk::Measure;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every available core. Not part of the results.
    #[serde(default, skip_serializing)]
    pub workers: usize,
    /// Artifact directory, relative to the working directory. Not part of the results.
    #[serde(default = "default_output", skip_serializing)]
    pub output: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub windows: WindowConfig,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub clean: CleanConfig,
    #[serde(default)]
    pub backtest: BacktestConfig,
    #[serde(default)]
    pub modelrisk: ModelRiskConfig,
    #[serde(default)]
    pub mcs: McsSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("riskgrid-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    File {
        path: PathBuf,
        #[serde(default = "default_format")]
        format: String,
    },
    Synthetic(SyntheticConfig),
}

fn default_format() -> String {
    "prices".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub length: usize,
    #[serde(default = "default_assets")]
    pub assets: usize,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    #[serde(default = "default_dgp_marginal")]
    pub marginal: String,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default = "default_dgp_copula")]
    pub copula: String,
    /// Archimedean generator parameter.
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Equicorrelation of the Gaussian and t copulas.
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
}

fn default_assets() -> usize {
    3
}
fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2005, 1, 3).expect("valid date")
}
fn default_dgp_marginal() -> String {
    "sgarch-norm".into()
}
fn default_dgp_copula() -> String {
    "clayton".into()
}
fn default_theta() -> f64 {
    2.0
}
fn default_rho() -> f64 {
    0.5
}
fn default_nu() -> f64 {
    6.0
}

/// ARMA-GARCH parameters of every synthetic asset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub mu: f64,
    pub phi: f64,
    pub theta: f64,
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub nu: f64,
    pub xi: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self { mu: 0.0005, phi: 0.0, theta: 0.0, omega: 2e-6, alpha: 0.08, beta: 0.9, gamma: 0.0, delta: 2.0, nu: 8.0, xi: 1.0 }
    }
}

impl From<ParamsConfig> for ArmaGarchParams {
    fn from(p: ParamsConfig) -> Self {
        ArmaGarchParams {
            mu: p.mu,
            phi: p.phi,
            theta: p.theta,
            omega: p.omega,
            alpha: p.alpha,
            beta: p.beta,
            gamma: p.gamma,
            delta: p.delta,
            nu: p.nu,
            xi: p.xi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    /// `equal`, `simplex` or `explicit`.
    pub mode: String,
    pub count: usize,
    pub explicit: Vec<Vec<f64>>,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self { mode: "equal".into(), count: 1, explicit: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub length: usize,
    pub step: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { length: 500, step: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub levels: Vec<f64>,
    pub draws: usize,
    pub allow_unconverged: bool,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self { levels: vec![0.975, 0.99], draws: 10_000, allow_unconverged: true }
    }
}

/// Model grid; an omitted list means every available entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub marginals: Option<Vec<String>>,
    pub dependence: Option<Vec<String>>,
    pub univariate: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    pub enabled: bool,
    pub z_cap: f64,
    pub burn_in: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self { enabled: true, z_cap: riskgrid::forecast::Z_CAP, burn_in: riskgrid::forecast::BURN_IN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub var_test: String,
    pub es_test: String,
    pub window: usize,
    pub confidence: f64,
    pub bootstrap: usize,
    pub dq_lags: usize,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self { var_test: "duration".into(), es_test: "cc".into(), window: 500, confidence: 0.99, bootstrap: 1000, dq_lags: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelRiskConfig {
    pub measures: Vec<String>,
    pub crisis_years: [i32; 2],
    pub portfolio_value: f64,
    pub horizon_days: u32,
}

impl Default for ModelRiskConfig {
    fn default() -> Self {
        Self {
            measures: vec!["mad".into(), "sd".into(), "iqr".into()],
            crisis_years: [2008, 2009],
            portfolio_value: 100_000.0,
            horizon_days: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McsSection {
    pub enabled: bool,
    pub alpha: f64,
    pub bootstrap: usize,
    pub cadence: usize,
    pub window: usize,
    pub block_length: Option<usize>,
}

impl Default for McsSection {
    fn default() -> Self {
        Self { enabled: true, alpha: 0.15, bootstrap: 1000, cadence: 20, window: 500, block_length: None }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {msg}"))
}

fn parse_list<T: std::str::FromStr>(field: &str, items: &Option<Vec<String>>, all: Vec<T>) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    match items {
        None => Ok(all),
        Some(v) => v
            .iter()
            .enumerate()
            .map(|(i, s)| s.parse::<T>().map_err(|e| invalid(&format!("{field}[{i}]"), e)))
            .collect(),
    }
}

impl RunConfig {
    /// Reads a configuration, or the configuration embedded in a run
    /// manifest. Relative data paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let mut table: toml::Table = text.parse().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if table.contains_key("manifest_version") {
            table = match table.remove("config") {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(CliError::Validation(format!("{}: manifest without a [config] table", path.display()))),
            };
        }
        let mut cfg: RunConfig =
            toml::Value::Table(table).try_into().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if let DataConfig::File { path: p, .. } = &mut cfg.data {
            if p.is_relative() {
                let joined = path.parent().unwrap_or(Path::new(".")).join(&*p);
                *p = std::fs::canonicalize(&joined).unwrap_or(joined);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != SCHEMA_VERSION {
            return Err(invalid("version", format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.version)));
        }
        if i64::try_from(self.seed).is_err() {
            return Err(invalid("seed", format!("must be at most {}", i64::MAX)));
        }
        match &self.data {
            DataConfig::File { format, .. } => {
                format.parse::<riskgrid::data::SeriesFormat>().map_err(|e| invalid("data.format", e))?;
            }
            DataConfig::Synthetic(s) => {
                if s.assets == 0 {
                    return Err(invalid("data.assets", "must be positive"));
                }
                if s.length < self.windows.length + 1 {
                    return Err(invalid("data.length", "shorter than one estimation window plus a target day"));
                }
                self.dgp_marginal()?;
                self.dgp_copula()?;
            }
        }
        match self.weights.mode.as_str() {
            "equal" => {}
            "simplex" if self.weights.count >= 1 => {}
            "simplex" => return Err(invalid("weights.count", "must be positive")),
            "explicit" if !self.weights.explicit.is_empty() => {}
            "explicit" => return Err(invalid("weights.explicit", "needs at least one weight vector")),
            m => return Err(invalid("weights.mode", format!("unknown mode `{m}`"))),
        }
        if self.windows.length < 2 || self.windows.step < 1 {
            return Err(invalid("windows", "length must be at least 2 and step at least 1"));
        }
        if self.forecast.levels.is_empty() {
            return Err(invalid("forecast.levels", "no levels"));
        }
        for (i, &l) in self.forecast.levels.iter().enumerate() {
            check_level(l).map_err(|e| invalid(&format!("forecast.levels[{i}]"), e))?;
        }
        if self.forecast.draws < 100 {
            return Err(invalid("forecast.draws", "at least 100 draws are needed"));
        }
        let grid = self.model_grid()?;
        if grid.models().is_empty() {
            return Err(invalid("grid", "empty model grid"));
        }
        if !(self.clean.z_cap > 0.0) || self.clean.burn_in < 3 {
            return Err(invalid("clean", "z_cap must be positive and burn_in at least 3"));
        }
        let (var_test, es_test) = self.tests()?;
        let _ = var_test;
        if !es_test.is_es() {
            return Err(invalid("backtest.es_test", format!("`{es_test}` does not test ES")));
        }
        if self.backtest.window < 2 {
            return Err(invalid("backtest.window", "must be at least 2"));
        }
        if !(self.backtest.confidence > 0.0 && self.backtest.confidence < 1.0) {
            return Err(invalid("backtest.confidence", "must lie in (0, 1)"));
        }
        if self.backtest.bootstrap == 0 || self.backtest.dq_lags == 0 {
            return Err(invalid("backtest", "bootstrap and dq_lags must be positive"));
        }
        self.measures()?;
        let [a, b] = self.modelrisk.crisis_years;
        if a > b {
            return Err(invalid("modelrisk.crisis_years", "first year after last year"));
        }
        if !(self.modelrisk.portfolio_value > 0.0) || self.modelrisk.horizon_days == 0 {
            return Err(invalid("modelrisk", "portfolio_value and horizon_days must be positive"));
        }
        if !(self.mcs.alpha > 0.0 && self.mcs.alpha < 1.0) {
            return Err(invalid("mcs.alpha", "must lie in (0, 1)"));
        }
        if self.mcs.bootstrap == 0 || self.mcs.cadence == 0 || self.mcs.window < riskgrid::mcs::MIN_DAYS {
            return Err(invalid("mcs", format!("bootstrap and cadence must be positive, window at least {}", riskgrid::mcs::MIN_DAYS)));
        }
        if self.mcs.block_length.is_some_and(|b| b == 0 || b > self.mcs.window) {
            return Err(invalid("mcs.block_length", "must lie in 1..=mcs.window"));
        }
        Ok(())
    }

    pub fn model_grid(&self) -> Result<ModelGrid, CliError> {
        Ok(ModelGrid {
            marginals: parse_list("grid.marginals", &self.grid.marginals, MarginalSpec::grid())?,
            dependence: parse_list("grid.dependence", &self.grid.dependence, CopulaFamily::ALL.to_vec())?,
            univariate: parse_list("grid.univariate", &self.grid.univariate, MarginalSpec::grid())?,
        })
    }

    pub fn tests(&self) -> Result<(TestKind, TestKind), CliError> {
        Ok((
            self.backtest.var_test.parse().map_err(|e| invalid("backtest.var_test", e))?,
            self.backtest.es_test.parse().map_err(|e| invalid("backtest.es_test", e))?,
        ))
    }

    pub fn measures(&self) -> Result<Vec<Measure>, CliError> {
        if self.modelrisk.measures.is_empty() {
            return Err(invalid("modelrisk.measures", "no measures"));
        }
        parse_list("modelrisk.measures", &Some(self.modelrisk.measures.clone()), Vec::new())
    }

    pub fn dgp_marginal(&self) -> Result<MarginalSpec, CliError> {
        match &self.data {
            DataConfig::Synthetic(s) => s.marginal.parse().map_err(|e| invalid("data.marginal", e)),
            _ => Err(invalid("data", "not a synthetic source")),
        }
    }

    pub fn dgp_copula(&self) -> Result<CopulaFamily, CliError> {
        match &self.data {
            DataConfig::Synthetic(s) => {
                let f: CopulaFamily = s.copula.parse().map_err(|e| invalid("data.copula", e))?;
                match f {
                    CopulaFamily::Gaussian
                    | CopulaFamily::StudentT
                    | CopulaFamily::Clayton
                    | CopulaFamily::Gumbel
                    | CopulaFamily::Frank
                    | CopulaFamily::Joe => Ok(f),
                    _ => Err(invalid("data.copula", format!("`{f}` cannot drive a synthetic panel"))),
                }
            }
            _ => Err(invalid("data", "not a synthetic source")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        "version = 1\n[data]\nsource = \"synthetic\"\nlength = 800\n"
    }

    #[test]
    fn defaults_are_the_baseline() {
        let cfg: RunConfig = toml::from_str(minimal()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.windows.length, 500);
        assert_eq!(cfg.backtest.confidence, 0.99);
        assert_eq!(cfg.tests().unwrap(), (TestKind::Duration, TestKind::Cc));
        assert_eq!(cfg.mcs.alpha, 0.15);
        assert_eq!(cfg.forecast.draws, 10_000);
        assert_eq!(cfg.model_grid().unwrap().models().len(), 200);
    }

    #[test]
    fn bad_level_names_the_field() {
        let text = format!("{}[forecast]\nlevels = [0.99, 1.5]\n", minimal());
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("forecast.levels[1]"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>(&format!("{}bogus = 1\n", minimal())).is_err());
    }

    #[test]
    fn serialized_config_round_trips_without_run_settings() {
        let mut cfg: RunConfig = toml::from_str(minimal()).unwrap();
        cfg.output = "elsewhere".into();
        cfg.workers = 7;
        let text = cfg.to_toml();
        assert!(!text.contains("elsewhere") && !text.contains("workers"));
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, RunConfig { output: default_output(), workers: 0, ..cfg });
    }
}
