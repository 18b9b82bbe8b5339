//! Stage orchestration with content-hash stamps.
//!
//! Every stage writes into `<output>/<stage>/` and finishes with a `STAMP`
//! file holding the hash of its inputs (configuration section plus upstream
//! stamps) and the SHA-256 of each output. A stage whose stamp matches and
//! whose outputs are intact is skipped and its outputs are read back.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use riskgrid::backtest::CandidateMask;
use riskgrid::data::{load_returns, ReturnPanel, SeriesFormat, WeightSet};
use riskgrid::forecast::ForecastCube;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::stages;

pub const STAMP: &str = "STAMP";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Data,
    Forecast,
    Backtest,
    ModelRisk,
    Mcs,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Data, Stage::Forecast, Stage::Backtest, Stage::ModelRisk, Stage::Mcs, Stage::Report];

    pub fn label(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Forecast => "forecast",
            Stage::Backtest => "backtest",
            Stage::ModelRisk => "modelrisk",
            Stage::Mcs => "mcs",
            Stage::Report => "report",
        }
    }

    /// Configuration that determines the stage's outputs.
    fn section(self, cfg: &RunConfig) -> String {
        let c = cfg;
        match self {
            Stage::Data => format!("seed={}\n{}{}", c.seed, toml_of(&c.data), toml_of(&c.weights)),
            Stage::Forecast => format!(
                "seed={}\n{}{}{}{}",
                c.seed,
                toml_of(&c.windows),
                toml_of(&c.forecast),
                toml_of(&c.grid),
                toml_of(&c.clean)
            ),
            Stage::Backtest => format!("seed={}\n{}", c.seed, toml_of(&c.backtest)),
            Stage::ModelRisk => toml_of(&c.modelrisk),
            Stage::Mcs => format!("seed={}\n{}{}", c.seed, toml_of(&c.mcs), toml_of(&c.modelrisk)),
            Stage::Report => c.to_toml(),
        }
    }
}

fn toml_of<T: serde::Serialize>(v: &T) -> String {
    toml::to_string(v).expect("configuration serializes")
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stage {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Stage::ALL
            .into_iter()
            .find(|x| x.label() == s)
            .ok_or_else(|| CliError::Validation(format!("--stage-filter: unknown stage `{s}`")))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| sha256_hex(&b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

/// Loaded or computed artifacts shared between stages.
#[derive(Default)]
pub struct Artifacts {
    pub panel: Option<ReturnPanel>,
    pub weights: Option<Vec<WeightSet>>,
    pub cube: Option<ForecastCube>,
    /// VaR-test mask and ES-test mask.
    pub masks: Option<(CandidateMask, CandidateMask)>,
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub out: PathBuf,
    filter: Option<Vec<Stage>>,
    digests: BTreeMap<Stage, String>,
    pub art: Artifacts,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, filter: Option<Vec<Stage>>) -> Self {
        let out = cfg.output.clone();
        Self { cfg, out, filter, digests: BTreeMap::new(), art: Artifacts::default() }
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.label())
    }

    pub fn digest(&self, stage: Stage) -> Option<&str> {
        self.digests.get(&stage).map(String::as_str)
    }

    fn input_hash(&self, stage: Stage) -> String {
        let mut h = Sha256::new();
        h.update(format!("{}\n{}\n", stage.label(), TOOL_VERSION));
        h.update(stage.section(&self.cfg));
        for (s, d) in &self.digests {
            if *s < stage {
                h.update(format!("{s}={d}\n"));
            }
        }
        hex::encode(h.finalize())
    }

    /// Stamp text if the stage's outputs are current.
    fn fresh(&self, stage: Stage, input: &str) -> Option<String> {
        let dir = self.dir(stage);
        let text = fs::read_to_string(dir.join(STAMP)).ok()?;
        let mut lines = text.lines();
        if lines.next()? != format!("input {input}") {
            return None;
        }
        for line in lines {
            let (hash, name) = line.split_once(' ')?;
            if file_hash(&dir.join(name))? != hash {
                return None;
            }
        }
        Some(text)
    }

    /// Runs every stage up to and including `target`.
    pub fn run_through(&mut self, target: Stage) -> Result<Vec<(Stage, Outcome)>, CliError> {
        let mut done = Vec::new();
        for stage in Stage::ALL.into_iter().filter(|s| *s <= target) {
            let input = self.input_hash(stage);
            if let Some(text) = self.fresh(stage, &input) {
                log::info!("stage {stage}: up to date");
                self.digests.insert(stage, sha256_hex(text.as_bytes()));
                done.push((stage, Outcome::Skipped));
                continue;
            }
            if self.filter.as_ref().is_some_and(|f| !f.contains(&stage)) {
                return Err(CliError::stage(stage.label(), "outputs are missing or stale and the stage is excluded by --stage-filter"));
            }
            log::info!("stage {stage}: running");
            let dir = self.dir(stage);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| CliError::stage(stage.label(), e))?;
            }
            fs::create_dir_all(&dir).map_err(|e| CliError::stage(stage.label(), e))?;
            let files = match stage {
                Stage::Data => stages::data(self),
                Stage::Forecast => stages::forecast(self),
                Stage::Backtest => stages::backtest(self),
                Stage::ModelRisk => stages::modelrisk(self),
                Stage::Mcs => stages::mcs(self),
                Stage::Report => crate::report::report(self),
            }?;
            let mut text = format!("input {input}\n");
            for name in files {
                let hash = file_hash(&dir.join(&name)).ok_or_else(|| CliError::stage(stage.label(), format!("output {name} not written")))?;
                text.push_str(&format!("{hash} {name}\n"));
            }
            fs::write(dir.join(STAMP), &text).map_err(|e| CliError::stage(stage.label(), e))?;
            self.digests.insert(stage, sha256_hex(text.as_bytes()));
            done.push((stage, Outcome::Ran));
        }
        Ok(done)
    }

    pub fn panel(&mut self) -> Result<&ReturnPanel, CliError> {
        if self.art.panel.is_none() {
            let p = load_returns(&self.dir(Stage::Data).join("returns.csv"), SeriesFormat::Returns).map_err(|e| CliError::stage("data", e))?;
            self.art.panel = Some(p);
        }
        Ok(self.art.panel.as_ref().expect("loaded"))
    }

    pub fn weights(&mut self) -> Result<&[WeightSet], CliError> {
        if self.art.weights.is_none() {
            let w = stages::read_weights(&self.dir(Stage::Data).join("weights.csv"))?;
            self.art.weights = Some(w);
        }
        Ok(self.art.weights.as_deref().expect("loaded"))
    }

    pub fn cube(&mut self) -> Result<&ForecastCube, CliError> {
        if self.art.cube.is_none() {
            let dir = self.dir(Stage::Forecast);
            let c = ForecastCube::read_csv(&dir.join("forecasts.csv"), Some(&dir.join("realized.csv"))).map_err(|e| CliError::stage("forecast", e))?;
            self.art.cube = Some(c);
        }
        Ok(self.art.cube.as_ref().expect("loaded"))
    }

    pub fn masks(&mut self) -> Result<(&ForecastCube, &CandidateMask, &CandidateMask), CliError> {
        self.cube()?;
        if self.art.masks.is_none() {
            let dir = self.dir(Stage::Backtest);
            let cube = self.art.cube.as_ref().expect("loaded");
            let w = self.cfg.backtest.window;
            let read = |name: &str| CandidateMask::read_csv(&dir.join(name), cube, w).map_err(|e| CliError::stage("backtest", e));
            self.art.masks = Some((read("mask_var.csv")?, read("mask_es.csv")?));
        }
        let (v, e) = self.art.masks.as_ref().expect("loaded");
        Ok((self.art.cube.as_ref().expect("loaded"), v, e))
    }
}

/// Builds the worker pool and runs the pipeline through `target`.
pub fn run_pipeline(cfg: RunConfig, target: Stage, filter: Option<Vec<Stage>>) -> Result<Vec<(Stage, Outcome)>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::stage("setup", e))?;
    let mut p = Pipeline::new(cfg, filter);
    pool.install(|| p.run_through(target))
}
