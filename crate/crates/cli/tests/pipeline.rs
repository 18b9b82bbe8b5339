use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use riskgrid_cli::{run_pipeline, CliError, Outcome, RunConfig, Stage};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small.toml")
}

fn config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&fixture()).unwrap();
    cfg.output = out.to_path_buf();
    cfg
}

/// One full run shared by the read-only tests.
fn shared() -> &'static Path {
    static RUN: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_, out) = RUN.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let mut cfg = config(&out);
        cfg.workers = 1;
        run_pipeline(cfg, Stage::Report, None).unwrap();
        (tmp, out)
    });
    out
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let header = rd.headers().unwrap().iter().map(String::from).collect();
    let rows = rd.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn full_run_emits_every_report_file() {
    let rep = shared().join("report");
    for f in ["model_risk_series.csv", "hac_tests.csv", "candidate_counts.csv", "percentile_bands.csv", "mcs_runs.csv", "manifest.toml"] {
        assert!(rep.join(f).is_file(), "{f} missing");
    }
    // G1 sets are single models in this grid, so G1 has no summaries.
    let summaries: Vec<_> = fs::read_dir(rep.join("summary")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    for name in ["var_0.99_G2_overall.csv", "es_0.975_G3_crisis.csv", "var_0.975_G4_pre_crisis.csv"] {
        assert!(summaries.iter().any(|s| s == name), "{name} missing from {summaries:?}");
    }
    assert!(!summaries.iter().any(|s| s.contains("_G1_")));
}

#[test]
fn series_has_one_row_per_date_group_and_measure() {
    let (h, rows) = table(&shared().join("report/model_risk_series.csv"));
    let key = ["date", "risk", "level", "weights_id", "selection", "group", "measure"].map(|c| col(&h, c));
    let keys: BTreeSet<Vec<&str>> = rows.iter().map(|r| key.iter().map(|&i| r[i].as_str()).collect()).collect();
    assert_eq!(keys.len(), rows.len());
    let per_date: BTreeMap<(&str, &str, &str), usize> =
        rows.iter().fold(BTreeMap::new(), |mut m, r| {
            *m.entry((r[key[0]].as_str(), r[key[1]].as_str(), r[key[2]].as_str())).or_default() += 1;
            m
        });
    // 4 groups x 3 measures x 2 selections
    assert!(per_date.values().all(|&n| n == 24), "{:?}", per_date.values().collect::<BTreeSet<_>>());
}

#[test]
fn summary_is_recomputed_from_the_raw_series() {
    let out = shared();
    let (h, rows) = table(&out.join("report/model_risk_series.csv"));
    let pick = |r: &Vec<String>| {
        r[col(&h, "risk")] == "var"
            && r[col(&h, "level")] == "0.99"
            && r[col(&h, "group")] == "G3"
            && r[col(&h, "measure")] == "mad"
            && r[col(&h, "selection")] == "duration"
    };
    let mut xs: Vec<f64> = rows.iter().filter(|r| pick(r)).filter_map(|r| r[col(&h, "value")].parse().ok()).collect();
    assert!(xs.len() > 10);
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();

    let (sh, srows) = table(&out.join("report/summary/var_0.99_G3_overall.csv"));
    let row = srows
        .iter()
        .find(|r| r[col(&sh, "measure")] == "mad" && r[col(&sh, "selection")] == "duration")
        .expect("summary row");
    let num = |c: &str| row[col(&sh, c)].parse::<f64>().unwrap();
    assert_eq!(row[col(&sh, "n_days")], xs.len().to_string());
    for (c, v) in [("Min", xs[0]), ("Max", xs[xs.len() - 1]), ("Mean", mean), ("SD", sd)] {
        assert!((num(c) - 100.0 * v).abs() <= 5e-7, "{c}: {} vs {}", num(c), 100.0 * v);
    }
    let dollars = 100_000.0 * 10f64.sqrt() * mean;
    assert!((num("MeanDollar") - dollars).abs() <= 0.005 + 1e-9);
}

#[test]
fn percentile_bands_follow_group_conventions() {
    let (h, rows) = table(&shared().join("report/percentile_bands.csv"));
    assert!(!rows.is_empty());
    let mut groups = BTreeSet::new();
    for r in &rows {
        assert_eq!(r[col(&h, "risk")], "var");
        let (lo, hi) = (&r[col(&h, "lower_pct")], &r[col(&h, "upper_pct")]);
        match r[col(&h, "group")].as_str() {
            "G3" => assert_eq!((lo.as_str(), hi.as_str()), ("0.05", "0.95")),
            "G1" | "G2" => assert_eq!((lo.as_str(), hi.as_str()), ("0.2", "0.8")),
            g => panic!("unexpected group {g}"),
        }
        let (a, b): (f64, f64) = (r[col(&h, "lower")].parse().unwrap(), r[col(&h, "upper")].parse().unwrap());
        assert!(a <= b);
        groups.insert(r[col(&h, "group")].clone());
    }
    assert_eq!(groups.len(), 3);
}

#[test]
fn rerun_skips_and_keeps_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let first = run_pipeline(config(&out), Stage::Report, None).unwrap();
    assert!(first.iter().all(|(_, o)| *o == Outcome::Ran));
    let before = tree(&out);
    let second = run_pipeline(config(&out), Stage::Report, None).unwrap();
    assert!(second.iter().all(|(_, o)| *o == Outcome::Skipped), "{second:?}");
    assert_eq!(before, tree(&out));

    // A downstream change reruns only the affected stages.
    let mut cfg = config(&out);
    cfg.mcs.alpha = 0.1;
    let third = run_pipeline(cfg.clone(), Stage::Report, Some(vec![Stage::Mcs, Stage::Report])).unwrap();
    let ran: Vec<Stage> = third.iter().filter(|(_, o)| *o == Outcome::Ran).map(|(s, _)| *s).collect();
    assert_eq!(ran, vec![Stage::Mcs, Stage::Report]);

    // An upstream change outside the filter is refused.
    cfg.forecast.draws = 600;
    let err = run_pipeline(cfg, Stage::Report, Some(vec![Stage::Mcs, Stage::Report])).unwrap_err();
    assert!(matches!(err, CliError::Stage { stage: "forecast", .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn tampered_output_triggers_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    run_pipeline(config(&out), Stage::Backtest, None).unwrap();
    let masks = out.join("backtest/mask_var.csv");
    let good = fs::read(&masks).unwrap();
    fs::write(&masks, b"date\n").unwrap();
    let again = run_pipeline(config(&out), Stage::Backtest, None).unwrap();
    assert_eq!(again.last(), Some(&(Stage::Backtest, Outcome::Ran)));
    assert_eq!(fs::read(&masks).unwrap(), good);
}

#[test]
fn manifest_rerun_is_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("again");
    let res = Command::new(env!("CARGO_BIN_EXE_riskgrid"))
        .args(["run", "--workers", "2", "--config"])
        .arg(shared().join("report/manifest.toml"))
        .arg("--output")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(tree(&shared().join("report")), tree(&out.join("report")));
}

#[test]
fn invalid_level_is_rejected_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture()).unwrap().replace("levels = [0.99, 0.975]", "levels = [0.99, 1.5]");
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("out");
    let res = Command::new(env!("CARGO_BIN_EXE_riskgrid")).args(["run", "--config"]).arg(&cfg).arg("--output").arg(&out).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("forecast.levels[1]"), "{stderr}");
    assert!(!out.exists());
}

#[test]
fn stage_subcommand_stops_at_its_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let res = Command::new(env!("CARGO_BIN_EXE_riskgrid"))
        .args(["simulate", "--seed", "11", "--config"])
        .arg(fixture())
        .arg("--output")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("data/returns.csv").is_file());
    assert!(!out.join("forecast").exists());
    let (h, rows) = table(&out.join("data/returns.csv"));
    assert_eq!(h.len(), 4);
    assert_eq!(rows.len(), 400);
}

#[test]
fn unknown_stage_in_filter_is_a_usage_error() {
    let res = Command::new(env!("CARGO_BIN_EXE_riskgrid"))
        .args(["run", "--stage-filter", "forecast,plots", "--config"])
        .arg(fixture())
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("plots"));
}
