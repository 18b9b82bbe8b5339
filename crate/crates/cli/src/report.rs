//! Final reshaping of stage outputs into report tables plus a run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;
use crate::pipeline::{sha256_hex, Pipeline, Stage, STAMP, TOOL_VERSION};

pub const MANIFEST: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::stage("report", e)
}

fn read_table(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>), CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    let header = rd.headers().map_err(fail)?.clone();
    let rows = rd.records().collect::<Result<Vec<_>, _>>().map_err(|e| fail(format!("{}: {e}", path.display())))?;
    Ok((header, rows))
}

/// Concatenates tables that share a header.
fn concat(inputs: &[PathBuf], out: &Path) -> Result<usize, CliError> {
    let mut w = csv::Writer::from_path(out).map_err(fail)?;
    let mut first: Option<csv::StringRecord> = None;
    let mut n = 0;
    for p in inputs {
        let (header, rows) = read_table(p)?;
        match &first {
            None => {
                w.write_record(&header).map_err(fail)?;
                first = Some(header);
            }
            Some(h) if *h != header => return Err(fail(format!("{}: header differs from the other tables", p.display()))),
            Some(_) => {}
        }
        for r in rows {
            w.write_record(&r).map_err(fail)?;
            n += 1;
        }
    }
    w.flush().map_err(fail)?;
    Ok(n)
}

fn column(header: &csv::StringRecord, name: &str) -> Result<usize, CliError> {
    header.iter().position(|h| h == name).ok_or_else(|| fail(format!("summary table lacks column `{name}`")))
}

/// Output files recorded in a stage's stamp.
fn stamped(dir: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(dir.join(STAMP)).map_err(|e| fail(format!("{}: {e}", dir.display())))?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(' '))
        .map(|(h, n)| (n.to_string(), h.to_string()))
        .collect())
}

pub fn report(p: &mut Pipeline) -> Result<Vec<String>, CliError> {
    let dir = p.dir(Stage::Report);
    let mr = p.dir(Stage::ModelRisk);
    let mcs = p.dir(Stage::Mcs);
    let bt = p.dir(Stage::Backtest);
    let mcs_on = p.cfg.mcs.enabled;

    let mut required = vec![mr.join("series.csv"), mr.join("summary.csv"), mr.join("tests.csv"), mr.join("bands.csv"), bt.join("candidate_counts.csv")];
    let mut run_files = Vec::new();
    if mcs_on {
        required.extend([mcs.join("series.csv"), mcs.join("summary.csv"), mcs.join("tests.csv")]);
        run_files = stamped(&mcs)?.into_iter().map(|(n, _)| n).filter(|n| n.starts_with("runs_")).map(|n| mcs.join(n)).collect();
    }
    let missing: Vec<String> = required.iter().chain(&run_files).filter(|f| !f.exists()).map(|f| f.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(fail(format!("missing stage outputs: {}", missing.join(", "))));
    }

    let mut files = Vec::new();
    let series: Vec<PathBuf> = if mcs_on { vec![mr.join("series.csv"), mcs.join("series.csv")] } else { vec![mr.join("series.csv")] };
    concat(&series, &dir.join("model_risk_series.csv"))?;
    let tests: Vec<PathBuf> = if mcs_on { vec![mr.join("tests.csv"), mcs.join("tests.csv")] } else { vec![mr.join("tests.csv")] };
    concat(&tests, &dir.join("hac_tests.csv"))?;
    fs::copy(bt.join("candidate_counts.csv"), dir.join("candidate_counts.csv")).map_err(fail)?;
    fs::copy(mr.join("bands.csv"), dir.join("percentile_bands.csv")).map_err(fail)?;
    files.extend(["model_risk_series.csv", "hac_tests.csv", "candidate_counts.csv", "percentile_bands.csv"].map(String::from));
    if mcs_on {
        concat(&run_files, &dir.join("mcs_runs.csv"))?;
        files.push("mcs_runs.csv".into());
    }

    // One table per risk, level, group and period, rows across measures,
    // weights and selections.
    let mut header = None;
    let mut tables: BTreeMap<(String, String, String, String), Vec<csv::StringRecord>> = BTreeMap::new();
    let summaries: Vec<PathBuf> = if mcs_on { vec![mr.join("summary.csv"), mcs.join("summary.csv")] } else { vec![mr.join("summary.csv")] };
    for path in &summaries {
        let (h, rows) = read_table(path)?;
        let idx = [column(&h, "risk")?, column(&h, "level")?, column(&h, "group")?, column(&h, "period")?];
        for r in rows {
            let key = (r[idx[0]].to_string(), r[idx[1]].to_string(), r[idx[2]].to_string(), r[idx[3]].to_string());
            tables.entry(key).or_default().push(r);
        }
        header.get_or_insert(h);
    }
    let sdir = dir.join("summary");
    fs::create_dir_all(&sdir).map_err(fail)?;
    if let Some(h) = header {
        for ((risk, level, group, period), rows) in &tables {
            let name = format!("summary/{risk}_{level}_{group}_{period}.csv");
            let mut w = csv::Writer::from_path(dir.join(&name)).map_err(fail)?;
            w.write_record(&h).map_err(fail)?;
            for r in rows {
                w.write_record(r).map_err(fail)?;
            }
            w.flush().map_err(fail)?;
            files.push(name);
        }
    }

    let manifest = manifest_text(p, &dir, &files)?;
    fs::write(dir.join(MANIFEST), manifest).map_err(fail)?;
    files.push(MANIFEST.into());
    Ok(files)
}

fn manifest_text(p: &Pipeline, dir: &Path, report_files: &[String]) -> Result<String, CliError> {
    let mut stages = toml::Table::new();
    let mut hashes = toml::Table::new();
    for stage in Stage::ALL.into_iter().filter(|s| *s != Stage::Report) {
        let digest = p.digest(stage).ok_or_else(|| fail(format!("stage {stage} has no stamp")))?;
        stages.insert(stage.label().into(), digest.to_string().into());
        for (name, hash) in stamped(&p.dir(stage))? {
            hashes.insert(format!("{stage}/{name}"), hash.into());
        }
    }
    for name in report_files {
        let bytes = fs::read(dir.join(name)).map_err(fail)?;
        hashes.insert(format!("report/{name}"), sha256_hex(&bytes).into());
    }
    let config: toml::Table = p.cfg.to_toml().parse().map_err(fail)?;
    let mut root = toml::Table::new();
    root.insert("manifest_version".into(), i64::from(MANIFEST_VERSION).into());
    root.insert("tool".into(), "riskgrid".into());
    root.insert("version".into(), TOOL_VERSION.into());
    root.insert("seed".into(), i64::try_from(p.cfg.seed).map_err(fail)?.into());
    root.insert("stages".into(), stages.into());
    root.insert("files".into(), hashes.into());
    root.insert("config".into(), config.into());
    toml::to_string(&root).map_err(fail)
}
