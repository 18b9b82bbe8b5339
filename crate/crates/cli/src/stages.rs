//! Stage bodies. Each writes its files into the stage directory and returns
//! their names; statistics come from the core library.

use std::path::Path;

use nalgebra::DMatrix;

use riskgrid::backtest::{candidate_mask, CandidateMask, MaskOptions};
use riskgrid::copulas::{CopulaFamily, FittedCopula};
use riskgrid::data::{load_returns, sample_simplex_weights, simulate_dgp, DgpSpec, SeriesFormat, WeightSet, DATE_FORMAT};
use riskgrid::forecast::{clean_outliers, run_grid, scale_dollar, ForecastCube, GridOptions, GridOutput};
use riskgrid::mcs::{mcs_schedule, McsConfig, McsOptions, McsSchedule};
use riskgrid::modelrisk::{
    daily_model_risk, daily_model_risk_with, hac_ttest, hac_ttest_periods, percentile_bands, percentile_bands_of, period_summary,
    write_summary_csv, Group, HacTest, Measure, ModelRiskSeries, Period, PeriodSplit, RiskKind, RiskQuery, SummaryRow,
};
use riskgrid::rng::{derive_seed, key_of};
use riskgrid::data::WindowPlan;

use crate::config::DataConfig;
use crate::error::CliError;
use crate::pipeline::{Pipeline, Stage};

type StageResult = Result<Vec<String>, CliError>;

fn fail(stage: Stage) -> impl Fn(riskgrid::Error) -> CliError {
    move |e| CliError::stage(stage.label(), e)
}

fn writer(stage: Stage, path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::stage(stage.label(), e))
}

fn put<I, T>(stage: Stage, w: &mut csv::Writer<std::fs::File>, rec: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(rec).map_err(|e| CliError::stage(stage.label(), e))
}

fn finish(stage: Stage, mut w: csv::Writer<std::fs::File>) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::stage(stage.label(), e))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v}"))
}

pub fn read_weights(path: &Path) -> Result<Vec<WeightSet>, CliError> {
    let err = |e: &dyn std::fmt::Display| CliError::stage("data", format!("{}: {e}", path.display()));
    let mut rd = csv::Reader::from_path(path).map_err(|e| err(&e))?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| err(&e))?;
        let w: Vec<f64> = rec.iter().skip(1).map(|s| s.parse::<f64>()).collect::<Result<_, _>>().map_err(|e| err(&e))?;
        out.push(WeightSet::new(w).map_err(|e| err(&e))?);
    }
    Ok(out)
}

fn dgp_copula(family: CopulaFamily, k: usize, s: &crate::config::SyntheticConfig) -> riskgrid::Result<FittedCopula> {
    let corr = || DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { s.rho });
    match family {
        CopulaFamily::Gaussian => FittedCopula::gaussian(corr()),
        CopulaFamily::StudentT => FittedCopula::student_t(corr(), s.nu),
        f => FittedCopula::archimedean(f, s.theta, k),
    }
}

pub fn data(p: &mut Pipeline) -> StageResult {
    let st = Stage::Data;
    let dir = p.dir(st);
    let panel = match &p.cfg.data {
        DataConfig::File { path, format } => {
            let fmt: SeriesFormat = format.parse().map_err(fail(st))?;
            load_returns(path, fmt).map_err(fail(st))?
        }
        DataConfig::Synthetic(s) => {
            let spec = p.cfg.dgp_marginal()?;
            let copula = dgp_copula(p.cfg.dgp_copula()?, s.assets, s).map_err(fail(st))?;
            simulate_dgp(&DgpSpec {
                marginals: vec![(spec, s.params.into()); s.assets],
                copula,
                length: s.length,
                seed: derive_seed(p.cfg.seed, &[key_of("data")]),
                start_date: s.start_date,
            })
            .map_err(fail(st))?
        }
    };
    let k = panel.n_assets();
    let weights = match p.cfg.weights.mode.as_str() {
        "equal" => vec![WeightSet::equal(k).map_err(fail(st))?],
        "simplex" => sample_simplex_weights(k, p.cfg.weights.count, derive_seed(p.cfg.seed, &[key_of("weights")])).map_err(fail(st))?,
        _ => p
            .cfg
            .weights
            .explicit
            .iter()
            .enumerate()
            .map(|(i, w)| {
                if w.len() != k {
                    return Err(CliError::stage(st.label(), format!("weights.explicit[{i}] has {} entries for {k} assets", w.len())));
                }
                WeightSet::new(w.clone()).map_err(|e| CliError::stage(st.label(), format!("weights.explicit[{i}]: {e}")))
            })
            .collect::<Result<_, _>>()?,
    };
    panel.write_csv(&dir.join("returns.csv")).map_err(fail(st))?;
    let mut w = writer(st, &dir.join("weights.csv"))?;
    let mut header = vec!["weights_id".to_string()];
    header.extend(panel.asset_names().iter().cloned());
    put(st, &mut w, &header)?;
    for (i, ws) in weights.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(ws.as_slice().iter().map(|x| format!("{x}")));
        put(st, &mut w, &rec)?;
    }
    finish(st, w)?;
    p.art.panel = Some(panel);
    p.art.weights = Some(weights);
    Ok(vec!["returns.csv".into(), "weights.csv".into()])
}

fn write_fits(st: Stage, dir: &Path, out: &GridOutput) -> Result<(), CliError> {
    let mut w = writer(st, &dir.join("marginal_fits.csv"))?;
    put(
        st,
        &mut w,
        [
            "date", "series", "spec", "converged", "loglik", "aic", "mu", "phi", "theta", "omega", "alpha", "beta", "gamma", "delta", "nu",
            "xi", "error",
        ],
    )?;
    for r in &out.marginal_fits {
        let mut rec = vec![
            r.date.format(DATE_FORMAT).to_string(),
            r.series.clone(),
            r.spec.to_string(),
            u8::from(r.converged).to_string(),
            format!("{}", r.loglik),
            format!("{}", r.aic),
        ];
        match &r.params {
            Some(q) => rec.extend([q.mu, q.phi, q.theta, q.omega, q.alpha, q.beta, q.gamma, q.delta, q.nu, q.xi].iter().map(|x| format!("{x}"))),
            None => rec.extend(std::iter::repeat_n("NA".to_string(), 10)),
        }
        rec.push(r.error.clone().unwrap_or_default());
        put(st, &mut w, &rec)?;
    }
    finish(st, w)?;
    let mut w = writer(st, &dir.join("copula_fits.csv"))?;
    put(st, &mut w, ["date", "marginal", "family", "params", "n_edges", "error"])?;
    for r in &out.copula_fits {
        let params: Vec<String> = r.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        put(
            st,
            &mut w,
            [
                r.date.format(DATE_FORMAT).to_string(),
                r.marginal.to_string(),
                r.family.to_string(),
                params.join(";"),
                r.edges.len().to_string(),
                r.error.clone().unwrap_or_default(),
            ],
        )?;
    }
    finish(st, w)?;
    let mut w = writer(st, &dir.join("copula_edges.csv"))?;
    put(st, &mut w, ["date", "marginal", "family", "tree", "edge", "pair", "conditioning", "pair_family", "rotation", "params"])?;
    for r in &out.copula_fits {
        for e in &r.edges {
            let mut rec = vec![r.date.format(DATE_FORMAT).to_string(), r.marginal.to_string(), r.family.to_string()];
            rec.extend(e.iter().cloned());
            put(st, &mut w, &rec)?;
        }
    }
    finish(st, w)
}

pub fn forecast(p: &mut Pipeline) -> StageResult {
    let st = Stage::Forecast;
    let dir = p.dir(st);
    let grid = p.cfg.model_grid()?;
    let mut levels = p.cfg.forecast.levels.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let opts = GridOptions {
        plan: WindowPlan { window_length: p.cfg.windows.length, step: p.cfg.windows.step },
        levels,
        n_draws: p.cfg.forecast.draws,
        seed: derive_seed(p.cfg.seed, &[key_of("forecast")]),
        allow_unconverged: p.cfg.forecast.allow_unconverged,
    };
    let clean = p.cfg.clean;
    p.panel()?;
    p.weights()?;
    let out = run_grid(p.art.panel.as_ref().expect("loaded"), p.art.weights.as_deref().expect("loaded"), &grid, &opts).map_err(fail(st))?;
    out.cube.write_csv(&dir.join("forecasts_raw.csv")).map_err(fail(st))?;
    let (cube, replaced) = if clean.enabled { clean_outliers(&out.cube, clean.z_cap, clean.burn_in) } else { (out.cube.clone(), 0) };
    log::info!("cleaning replaced {replaced} forecasts");
    cube.write_csv(&dir.join("forecasts.csv")).map_err(fail(st))?;
    cube.write_realized_csv(&dir.join("realized.csv")).map_err(fail(st))?;
    write_fits(st, &dir, &out)?;
    std::fs::write(dir.join("cleaning.txt"), format!("replaced {replaced}\n")).map_err(|e| CliError::stage(st.label(), e))?;
    p.art.cube = Some(cube);
    Ok(["forecasts_raw.csv", "forecasts.csv", "realized.csv", "marginal_fits.csv", "copula_fits.csv", "copula_edges.csv", "cleaning.txt"]
        .map(String::from)
        .to_vec())
}

pub fn backtest(p: &mut Pipeline) -> StageResult {
    let st = Stage::Backtest;
    let dir = p.dir(st);
    let (var_test, es_test) = p.cfg.tests()?;
    let b = p.cfg.backtest.clone();
    let opts = |test| MaskOptions {
        window: b.window,
        conf: b.confidence,
        bootstrap_n: b.bootstrap,
        dq_lags: b.dq_lags,
        seed: derive_seed(p.cfg.seed, &[key_of("backtest"), key_of(riskgrid::backtest::TestKind::label(test))]),
    };
    let (ov, oe) = (opts(var_test), opts(es_test));
    let cube = p.cube()?;
    if cube.dates().len() <= b.window {
        return Err(CliError::stage(st.label(), format!("{} forecast days leave nothing after a {}-day backtest window", cube.dates().len(), b.window)));
    }
    let mv = candidate_mask(cube, var_test, &ov).map_err(fail(st))?;
    let me = candidate_mask(cube, es_test, &oe).map_err(fail(st))?;
    mv.write_csv(&dir.join("mask_var.csv")).map_err(fail(st))?;
    me.write_csv(&dir.join("mask_es.csv")).map_err(fail(st))?;
    let mut w = writer(st, &dir.join("candidate_counts.csv"))?;
    put(st, &mut w, ["date", "risk", "test", "level", "weights_id", "n_candidates", "n_valid", "n_models"])?;
    for (kind, mask) in [(RiskKind::Var, &mv), (RiskKind::Es, &me)] {
        for d in mask.first_day()..cube.dates().len() {
            for (l, level) in cube.levels().iter().enumerate() {
                for wi in 0..cube.n_weights() {
                    let n_valid = (0..cube.models().len()).filter(|&m| cube.cell(d, m, l, wi).valid).count();
                    put(
                        st,
                        &mut w,
                        [
                            cube.dates()[d].format(DATE_FORMAT).to_string(),
                            kind.to_string(),
                            mask.test().to_string(),
                            format!("{level}"),
                            wi.to_string(),
                            mask.candidates(d, l, wi).len().to_string(),
                            n_valid.to_string(),
                            cube.models().len().to_string(),
                        ],
                    )?;
                }
            }
        }
    }
    finish(st, w)?;
    p.art.masks = Some((mv, me));
    Ok(["mask_var.csv", "mask_es.csv", "candidate_counts.csv"].map(String::from).to_vec())
}

const SERIES_HEADER: [&str; 9] = ["date", "risk", "level", "weights_id", "selection", "group", "measure", "value", "n_models"];
const TEST_HEADER: [&str; 10] = ["risk", "level", "weights_id", "selection", "measure", "comparison", "n", "t_stat", "p_value", "lag"];

fn series_rows(
    st: Stage,
    w: &mut csv::Writer<std::fs::File>,
    q: &RiskQuery,
    selection: &str,
    s: &ModelRiskSeries,
) -> Result<(), CliError> {
    for (i, date) in s.dates.iter().enumerate() {
        put(
            st,
            w,
            [
                date.format(DATE_FORMAT).to_string(),
                q.kind.to_string(),
                format!("{}", q.level),
                q.weights_id.to_string(),
                selection.to_string(),
                q.group.to_string(),
                q.measure.to_string(),
                opt(s.values[i]),
                s.n_models[i].to_string(),
            ],
        )?;
    }
    Ok(())
}

fn test_row(
    st: Stage,
    w: &mut csv::Writer<std::fs::File>,
    q: &RiskQuery,
    selection: &str,
    comparison: &str,
    n: usize,
    r: riskgrid::Result<HacTest>,
) -> Result<(), CliError> {
    let (t, pv, lag) = match r {
        Ok(h) => (format!("{}", h.t_stat), format!("{}", h.p_value), h.lag.to_string()),
        Err(e) => {
            log::info!("{comparison} test for {} {} skipped: {e}", q.kind, q.measure);
            ("NA".into(), "NA".into(), "NA".into())
        }
    };
    put(
        st,
        w,
        [
            q.kind.to_string(),
            format!("{}", q.level),
            q.weights_id.to_string(),
            selection.to_string(),
            q.measure.to_string(),
            comparison.to_string(),
            n.to_string(),
            t,
            pv,
            lag,
        ],
    )
}

/// Values present in both series on the same days.
fn paired(a: &ModelRiskSeries, b: &ModelRiskSeries) -> (Vec<f64>, Vec<f64>) {
    a.values.iter().zip(&b.values).filter_map(|(x, y)| Some(((*x)?, (*y)?))).unzip()
}

fn split_periods(s: &ModelRiskSeries, split: &PeriodSplit) -> (Vec<f64>, Vec<f64>) {
    let (mut crisis, mut rest) = (Vec::new(), Vec::new());
    for (d, v) in s.dates.iter().zip(&s.values) {
        if let Some(v) = v {
            if split.period_of(*d) == Period::Crisis {
                crisis.push(*v);
            } else {
                rest.push(*v);
            }
        }
    }
    (crisis, rest)
}

fn summary_rows(q: &RiskQuery, selection: &str, s: &ModelRiskSeries, split: &PeriodSplit) -> Vec<SummaryRow> {
    period_summary(s, split)
        .into_iter()
        .map(|(period, stats)| SummaryRow {
            kind: q.kind,
            level: q.level,
            group: q.group,
            measure: q.measure,
            weights_id: q.weights_id,
            selection: selection.to_string(),
            period,
            stats,
        })
        .collect()
}

fn queries(cube: &ForecastCube, measures: &[Measure]) -> Vec<RiskQuery> {
    let mut out = Vec::new();
    for kind in RiskKind::ALL {
        for &level in cube.levels() {
            for weights_id in 0..cube.n_weights() {
                for group in Group::ALL {
                    for &measure in measures {
                        out.push(RiskQuery { group, level, weights_id, kind, measure });
                    }
                }
            }
        }
    }
    out
}

fn set_label(cube: &ForecastCube, group: Group, set: &[usize]) -> String {
    let m = cube.models()[set[0]];
    match group {
        Group::G1 => m.dependence_label().to_string(),
        Group::G2 => m.marginal.to_string(),
        _ => "all".into(),
    }
}

pub fn modelrisk(p: &mut Pipeline) -> StageResult {
    let st = Stage::ModelRisk;
    let dir = p.dir(st);
    let measures = p.cfg.measures()?;
    let mr = p.cfg.modelrisk.clone();
    let split = PeriodSplit { crisis_first: mr.crisis_years[0], crisis_last: mr.crisis_years[1] };
    let (cube, mv, me) = p.masks()?;
    let mut series = writer(st, &dir.join("series.csv"))?;
    put(st, &mut series, SERIES_HEADER)?;
    let mut tests = writer(st, &dir.join("tests.csv"))?;
    put(st, &mut tests, TEST_HEADER)?;
    let mut summary = Vec::new();
    for q in queries(cube, &measures) {
        let mask = if q.kind == RiskKind::Var { mv } else { me };
        let sel = mask.test().label();
        let s = daily_model_risk(cube, Some(mask), &q).map_err(fail(st))?;
        series_rows(st, &mut series, &q, sel, &s)?;
        summary.extend(summary_rows(&q, sel, &s, &split));
        let (crisis, rest) = split_periods(&s, &split);
        test_row(st, &mut tests, &q, sel, &format!("{}:crisis-rest", q.group), crisis.len() + rest.len(), hac_ttest_periods(&crisis, &rest))?;
        if q.group == Group::G2 {
            let g1 = daily_model_risk(cube, Some(mask), &RiskQuery { group: Group::G1, ..q }).map_err(fail(st))?;
            let (a, b) = paired(&s, &g1);
            test_row(st, &mut tests, &q, sel, "G2-G1", a.len(), hac_ttest(&a, &b))?;
        }
    }
    finish(st, series)?;
    finish(st, tests)?;
    write_summary_csv(&dir.join("summary.csv"), &summary, mr.portfolio_value, mr.horizon_days).map_err(fail(st))?;

    let mut w = writer(st, &dir.join("bands.csv"))?;
    put(
        st,
        &mut w,
        ["date", "risk", "level", "weights_id", "group", "set", "lower_pct", "upper_pct", "lower", "upper", "n_models", "value_at_lower", "value_at_upper"],
    )?;
    let pv = mr.portfolio_value;
    for &level in cube.levels() {
        for weights_id in 0..cube.n_weights() {
            for group in [Group::G1, Group::G2, Group::G3] {
                let q = RiskQuery { group, level, weights_id, kind: RiskKind::Var, measure: Measure::Mad };
                let (lo, hi) = if group == Group::G3 { (0.05, 0.95) } else { (0.2, 0.8) };
                let sets: Vec<(String, Vec<riskgrid::modelrisk::PercentileBand>)> = if group == Group::G3 {
                    vec![("all".into(), percentile_bands(cube, Some(mv), &q, lo, hi).map_err(fail(st))?)]
                } else {
                    group
                        .sets(cube)
                        .iter()
                        .map(|set| Ok((set_label(cube, group, set), percentile_bands_of(cube, Some(mv), &q, set, lo, hi).map_err(fail(st))?)))
                        .collect::<Result<_, CliError>>()?
                };
                for (label, bands) in sets {
                    for b in bands {
                        put(
                            st,
                            &mut w,
                            [
                                b.date.format(DATE_FORMAT).to_string(),
                                "var".into(),
                                format!("{level}"),
                                weights_id.to_string(),
                                group.to_string(),
                                label.clone(),
                                format!("{lo}"),
                                format!("{hi}"),
                                format!("{}", b.lower),
                                format!("{}", b.upper),
                                b.n_models.to_string(),
                                format!("{}", pv - scale_dollar(b.lower, pv, mr.horizon_days).map_err(fail(st))?),
                                format!("{}", pv - scale_dollar(b.upper, pv, mr.horizon_days).map_err(fail(st))?),
                            ],
                        )?;
                    }
                }
            }
        }
    }
    finish(st, w)?;
    Ok(["series.csv", "summary.csv", "tests.csv", "bands.csv"].map(String::from).to_vec())
}

fn mcs_file(kind: RiskKind, level: f64, w: usize) -> String {
    format!("runs_{kind}_{level}_w{w}.csv")
}

pub fn mcs(p: &mut Pipeline) -> StageResult {
    let st = Stage::Mcs;
    let dir = p.dir(st);
    if !p.cfg.mcs.enabled {
        std::fs::write(dir.join("disabled.txt"), "mcs disabled in configuration\n").map_err(|e| CliError::stage(st.label(), e))?;
        return Ok(vec!["disabled.txt".into()]);
    }
    let measures = p.cfg.measures()?;
    let mr = p.cfg.modelrisk.clone();
    let m = p.cfg.mcs.clone();
    let seed = derive_seed(p.cfg.seed, &[key_of("mcs")]);
    let split = PeriodSplit { crisis_first: mr.crisis_years[0], crisis_last: mr.crisis_years[1] };
    let (cube, mv, me) = p.masks()?;
    let mut files = Vec::new();
    let mut schedules: Vec<(RiskKind, f64, usize, McsSchedule)> = Vec::new();
    for kind in RiskKind::ALL {
        let mask: &CandidateMask = if kind == RiskKind::Var { mv } else { me };
        for &level in cube.levels() {
            for wi in 0..cube.n_weights() {
                let opts = McsOptions {
                    cadence: m.cadence,
                    window: m.window,
                    kind,
                    config: McsConfig { alpha: m.alpha, bootstrap_n: m.bootstrap, block_length: m.block_length, seed },
                };
                let s = mcs_schedule(cube, Some(mask), level, wi, &opts).map_err(fail(st))?;
                let name = mcs_file(kind, level, wi);
                s.write_csv(&dir.join(&name), cube).map_err(fail(st))?;
                files.push(name);
                schedules.push((kind, level, wi, s));
            }
        }
    }
    let mut series = writer(st, &dir.join("series.csv"))?;
    put(st, &mut series, SERIES_HEADER)?;
    let mut tests = writer(st, &dir.join("tests.csv"))?;
    put(st, &mut tests, TEST_HEADER)?;
    let mut summary = Vec::new();
    for q in queries(cube, &measures) {
        let (mask, ml) = {
            let mask = if q.kind == RiskKind::Var { mv } else { me };
            (mask, mask.levels().iter().position(|&x| x == q.level).expect("mask levels match the cube"))
        };
        let l = cube.level_index(q.level).expect("level from cube");
        let (_, _, _, s) = schedules
            .iter()
            .find(|(k, lv, wi, _)| *k == q.kind && *lv == q.level && *wi == q.weights_id)
            .expect("schedule per query");
        let valid = |d: usize, mi: usize| cube.cell(d, mi, l, q.weights_id).valid;
        let post = daily_model_risk_with(cube, s.days(), &q, |d, mi| valid(d, mi) && s.keep(d, mi)).map_err(fail(st))?;
        let pre = daily_model_risk_with(cube, s.days(), &q, |d, mi| valid(d, mi) && mask.passed(d, mi, ml, q.weights_id)).map_err(fail(st))?;
        series_rows(st, &mut series, &q, "mcs", &post)?;
        summary.extend(summary_rows(&q, "mcs", &post, &split));
        let (a, b) = paired(&post, &pre);
        test_row(st, &mut tests, &q, "mcs", &format!("{}:mcs-backtest", q.group), a.len(), hac_ttest(&a, &b))?;
    }
    finish(st, series)?;
    finish(st, tests)?;
    write_summary_csv(&dir.join("summary.csv"), &summary, mr.portfolio_value, mr.horizon_days).map_err(fail(st))?;
    files.extend(["series.csv", "summary.csv", "tests.csv"].map(String::from));
    Ok(files)
}
