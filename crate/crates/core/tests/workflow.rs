//! Library-level run through every stage on a small synthetic panel.

use chrono::NaiveDate;

use riskgrid::backtest::{candidate_mask, MaskOptions, TestKind};
use riskgrid::copulas::{CopulaFamily, FittedCopula};
use riskgrid::data::{portfolio_return, simulate_dgp, DgpSpec, WeightSet, WindowPlan};
use riskgrid::forecast::{run_grid, ForecastCube, GridOptions, ModelGrid};
use riskgrid::marginals::{ArmaGarchParams, GarchFamily, InnovationKind, MarginalSpec};
use riskgrid::mcs::{mcs_schedule, McsConfig, McsOptions};
use riskgrid::modelrisk::{daily_model_risk, daily_model_risk_with, Group, Measure, RiskKind, RiskQuery};

const WINDOW: usize = 200;
const LENGTH: usize = 300;

fn cube() -> ForecastCube {
    let spec = MarginalSpec::new(GarchFamily::Garch, InnovationKind::Normal);
    let panel = simulate_dgp(&DgpSpec {
        marginals: vec![(spec, ArmaGarchParams::garch(0.02, 0.08, 0.9)); 2],
        copula: FittedCopula::archimedean(CopulaFamily::Clayton, 2.0, 2).unwrap(),
        length: LENGTH,
        seed: 5,
        start_date: NaiveDate::from_ymd_opt(2007, 1, 1).unwrap(),
    })
    .unwrap();
    let weights = vec![WeightSet::equal(2).unwrap(), WeightSet::new(vec![0.8, 0.2]).unwrap()];
    let grid = ModelGrid { marginals: vec![spec], dependence: vec![CopulaFamily::Gaussian, CopulaFamily::Clayton], univariate: vec![spec] };
    let opts = GridOptions { plan: WindowPlan { window_length: WINDOW, step: 1 }, levels: vec![0.975, 0.99], n_draws: 500, seed: 1, allow_unconverged: true };
    let out = run_grid(&panel, &weights, &grid, &opts).unwrap();
    for (w, ws) in weights.iter().enumerate() {
        let r = portfolio_return(&panel, ws).unwrap();
        assert_eq!(out.cube.realized_series(w), r[WINDOW..].to_vec());
    }
    out.cube
}

#[test]
fn stages_compose() {
    let cube = cube();
    assert_eq!(cube.dates().len(), LENGTH - WINDOW);
    assert_eq!(cube.models().len(), 3);
    for d in 0..cube.dates().len() {
        for m in 0..3 {
            for l in 0..2 {
                for w in 0..2 {
                    let c = cube.cell(d, m, l, w);
                    if c.valid {
                        assert!(c.es >= c.var && c.var > 0.0, "{c:?}");
                    }
                }
            }
        }
    }
    // higher level, larger VaR
    assert!((0..cube.dates().len()).all(|d| cube.cell(d, 0, 1, 0).var > cube.cell(d, 0, 0, 0).var));

    let bt = 40;
    let mask = candidate_mask(&cube, TestKind::Duration, &MaskOptions { window: bt, seed: 2, ..MaskOptions::default() }).unwrap();
    assert_eq!(mask.first_day(), bt);
    let q = RiskQuery { group: Group::G3, level: 0.99, weights_id: 1, kind: RiskKind::Var, measure: Measure::Mad };
    let pre = daily_model_risk(&cube, Some(&mask), &q).unwrap();
    assert_eq!(pre.len(), cube.dates().len() - bt);
    assert!(pre.values.iter().flatten().all(|v| *v >= 0.0));
    assert!(!pre.present().is_empty());

    let opts = McsOptions { cadence: 10, window: 30, kind: RiskKind::Var, config: McsConfig { bootstrap_n: 200, seed: 3, ..McsConfig::default() } };
    let sched = mcs_schedule(&cube, Some(&mask), 0.99, 1, &opts).unwrap();
    assert_eq!(sched.runs.first().map(|r| r.day), Some(bt));
    let l = cube.level_index(0.99).unwrap();
    let post = daily_model_risk_with(&cube, sched.days(), &q, |d, m| cube.cell(d, m, l, 1).valid && sched.keep(d, m)).unwrap();
    for (a, b) in post.n_models.iter().zip(&pre.n_models[sched.days().start - bt..]) {
        assert!(a <= b);
    }
}
