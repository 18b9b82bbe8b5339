use super::{ForecastCube, Reason};
use crate::stats::{mean, sample_sd};
use crate::{Error, Result};

pub const Z_CAP: f64 = 25.0;
pub const BURN_IN: usize = 500;

/// Replaces outlying forecasts by the previous day's value.
///
/// For every (model, level, weight) series the mean and standard deviation of
/// the absolute daily changes are computed over the first `burn_in` valid
/// forecasts and then frozen. A later cell whose VaR or ES change has a
/// z-score above `z_cap` takes the previous day's (VaR, ES) pair. Returns the
/// cleaned cube and the number of replacements.
pub fn clean_outliers(cube: &ForecastCube, z_cap: f64, burn_in: usize) -> (ForecastCube, usize) {
    let mut out = cube.clone();
    let mut replaced = 0;
    let (nm, nl, nw) = (cube.models().len(), cube.levels().len(), cube.n_weights());
    for m in 0..nm {
        for l in 0..nl {
            for w in 0..nw {
                let valid: Vec<usize> = (0..cube.dates().len()).filter(|&d| cube.cell(d, m, l, w).valid).collect();
                if valid.len() < burn_in || burn_in < 3 {
                    if !valid.is_empty() {
                        log::warn!(
                            "series {} level {} weights {}: {} valid forecasts, fewer than burn-in {burn_in}; not cleaned",
                            cube.models()[m],
                            cube.levels()[l],
                            w,
                            valid.len()
                        );
                    }
                    continue;
                }
                let changes = |f: fn(&super::Cell) -> f64| -> (f64, f64) {
                    let d: Vec<f64> = valid[..burn_in]
                        .windows(2)
                        .map(|p| (f(&cube.cell(p[1], m, l, w)) - f(&cube.cell(p[0], m, l, w))).abs())
                        .collect();
                    (mean(&d), sample_sd(&d))
                };
                let (mv, sv) = changes(|c| c.var);
                let (me, se) = changes(|c| c.es);
                let z = |x: f64, mu: f64, sd: f64| if sd > 0.0 { (x - mu) / sd } else { 0.0 };
                for p in burn_in..valid.len() {
                    let prev = out.cell(valid[p - 1], m, l, w);
                    let cur = out.cell(valid[p], m, l, w);
                    let zv = z((cur.var - prev.var).abs(), mv, sv);
                    let ze = z((cur.es - prev.es).abs(), me, se);
                    if zv > z_cap || ze > z_cap {
                        out.set_cell(valid[p], m, l, w, super::Cell { var: prev.var, es: prev.es, valid: true, reason: Reason::Cleaned });
                        replaced += 1;
                    }
                }
            }
        }
    }
    (out, replaced)
}

/// `value * pv * sqrt(horizon_days)`, the square-root-of-time dollar figure.
pub fn scale_dollar(value: f64, pv: f64, horizon_days: u32) -> Result<f64> {
    if !(value >= 0.0) || !(pv > 0.0) || horizon_days == 0 {
        return Err(Error::invalid(format!("cannot scale value {value} with pv {pv} over {horizon_days} days")));
    }
    Ok(value * pv * (horizon_days as f64).sqrt())
}
