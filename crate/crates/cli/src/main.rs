use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use riskgrid_cli::{run_pipeline, CliError, Outcome, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "riskgrid", version, about = "Model risk of copula VaR and ES forecasts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML), or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Artifact directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Comma-separated stages allowed to run; others must already be up to date.
    #[arg(long, global = true, value_delimiter = ',')]
    stage_filter: Option<Vec<String>>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Load or simulate returns and build portfolio weights.
    Simulate,
    /// Rolling forecasts over the model grid.
    Forecast,
    /// Backtest-based candidate selection.
    Backtest,
    /// Daily model-risk series, summaries, bands and tests.
    Modelrisk,
    /// Model confidence set selection and post-selection model risk.
    Mcs,
    /// Assemble report tables and the run manifest.
    Report,
    /// Every stage in order.
    Run,
}

impl Command {
    fn target(self) -> Stage {
        match self {
            Command::Simulate => Stage::Data,
            Command::Forecast => Stage::Forecast,
            Command::Backtest => Stage::Backtest,
            Command::Modelrisk => Stage::ModelRisk,
            Command::Mcs => Stage::Mcs,
            Command::Report | Command::Run => Stage::Report,
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.validate()?;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = cli.output {
        cfg.output = o;
    }
    let filter = cli
        .stage_filter
        .map(|v| v.iter().map(|s| s.trim().parse::<Stage>()).collect::<Result<Vec<_>, _>>())
        .transpose()?;
    for (stage, outcome) in run_pipeline(cfg, cli.command.target(), filter)? {
        let what = match outcome {
            Outcome::Ran => "done",
            Outcome::Skipped => "up to date",
        };
        println!("{stage}: {what}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
