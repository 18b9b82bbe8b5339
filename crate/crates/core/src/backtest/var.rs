use nalgebra::{DMatrix, DVector};

use super::{aligned, check_conf, check_coverage, hit_sequence, BacktestResult, HitSequence, TestKind};
use crate::numeric::brent_minimize;
use crate::stats::chi2_sf;
use crate::{Error, Result};

pub const DQ_LAGS: usize = 4;
/// Search range for the Weibull shape under the alternative.
pub const SHAPE_RANGE: (f64, f64) = (1e-3, 10.0);

/// Spells between violations with a censoring flag. The spell before the
/// first hit and the one after the last are censored unless the window
/// starts or ends on a hit.
fn spells(hits: &[u8]) -> Vec<(f64, bool)> {
    let n = hits.len();
    let idx: Vec<usize> = (0..n).filter(|&t| hits[t] == 1).map(|t| t + 1).collect();
    let mut out = Vec::with_capacity(idx.len() + 1);
    if hits[0] == 0 {
        out.push((idx[0] as f64, true));
    }
    for w in idx.windows(2) {
        out.push(((w[1] - w[0]) as f64, false));
    }
    if hits[n - 1] == 0 {
        out.push(((n - idx[idx.len() - 1]) as f64, true));
    }
    out
}

/// Weibull log-likelihood with `a^b` concentrated out, as a function of the
/// shape `b`. Censored spells contribute `ln S(D)`.
fn profile_loglik(spells: &[(f64, bool)], b: f64) -> f64 {
    let u = spells.iter().filter(|s| !s.1).count() as f64;
    let sum_pow: f64 = spells.iter().map(|s| s.0.powf(b)).sum();
    let sum_log: f64 = spells.iter().filter(|s| !s.1).map(|s| s.0.ln()).sum();
    let ab = u / sum_pow;
    u * ab.ln() + u * b.ln() + (b - 1.0) * sum_log - ab * sum_pow
}

/// Weibull duration log-density `ln(a^b b D^(b-1) exp(-(aD)^b))`.
pub fn weibull_ln_pdf(d: f64, a: f64, b: f64) -> f64 {
    b * a.ln() + b.ln() + (b - 1.0) * d.ln() - (a * d).powf(b)
}

/// Exponential duration log-density `ln(p exp(-pD))`.
pub fn exponential_ln_pdf(d: f64, p: f64) -> f64 {
    p.ln() - p * d
}

/// Duration-based independence test of VaR violations: likelihood ratio of
/// a Weibull spell distribution against the exponential (shape 1).
pub fn duration_test(returns: &[f64], var: &[f64], coverage: f64, conf: f64) -> Result<BacktestResult> {
    aligned(returns.len(), var.len())?;
    check_coverage(coverage)?;
    check_conf(conf)?;
    if returns.len() < 2 {
        return Err(Error::TooShort { need: 2, got: returns.len() });
    }
    duration_test_hits(&hit_sequence(returns, var)?, conf)
}

pub(crate) fn duration_test_hits(hits: &HitSequence, conf: f64) -> Result<BacktestResult> {
    let n_hits = hits.count();
    if n_hits < 2 {
        return Ok(BacktestResult::degenerate(TestKind::Duration, n_hits, "fewer than two violations"));
    }
    let sp = spells(hits.as_slice());
    let restricted = profile_loglik(&sp, 1.0);
    let (log_b, nll) = brent_minimize(|lb| -profile_loglik(&sp, lb.exp()), SHAPE_RANGE.0.ln(), SHAPE_RANGE.1.ln(), 1e-8, 200);
    let unrestricted = (-nll).max(restricted);
    let lr = 2.0 * (unrestricted - restricted);
    if !lr.is_finite() {
        return Err(Error::Numerical(format!("duration likelihood ratio not finite (shape {})", log_b.exp())));
    }
    Ok(BacktestResult::decided(TestKind::Duration, lr, chi2_sf(lr, 1.0), n_hits, conf))
}

/// Dynamic quantile test: Wald test that the demeaned hits are unpredictable
/// from an intercept, their own lags and the VaR forecast.
pub fn dq_test(returns: &[f64], var: &[f64], level: f64, lags: usize, conf: f64) -> Result<BacktestResult> {
    aligned(returns.len(), var.len())?;
    check_conf(conf)?;
    let alpha = 1.0 - level;
    check_coverage(alpha)?;
    let n = returns.len();
    if n <= lags + 2 {
        return Err(Error::TooShort { need: lags + 3, got: n });
    }
    let hits = hit_sequence(returns, var)?;
    let n_hits = hits.count();
    let y: Vec<f64> = hits.as_slice().iter().map(|&h| h as f64 - alpha).collect();
    let rows = n - lags;
    let cols = lags + 2;
    let x = DMatrix::from_fn(rows, cols, |i, j| {
        let t = i + lags;
        match j {
            0 => 1.0,
            j if j <= lags => y[t - j],
            _ => var[t],
        }
    });
    let yv = DVector::from_iterator(rows, y[lags..].iter().copied());
    let xtx = x.transpose() * &x;
    let sv = xtx.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-10 * smax) {
        return Ok(BacktestResult::degenerate(TestKind::Dq, n_hits, "singular regressors"));
    }
    let Some(ch) = xtx.clone().cholesky() else {
        return Ok(BacktestResult::degenerate(TestKind::Dq, n_hits, "singular regressors"));
    };
    let beta = ch.solve(&(x.transpose() * yv));
    let stat = (beta.transpose() * &xtx * &beta)[(0, 0)] / (alpha * (1.0 - alpha));
    Ok(BacktestResult::decided(TestKind::Dq, stat, chi2_sf(stat, cols as f64), n_hits, conf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::stats::ks_uniform_statistic;
    use rand::Rng;

    fn iid_hits(n: usize, p: f64, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
        // returns -1 on hit days against VaR 0.5, plus a varying VaR so the DQ
        // regressors are not collinear
        let var: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
        let r: Vec<f64> = var.iter().map(|v| if rng.random::<f64>() < p { -v - 1.0 } else { 0.0 }).collect();
        (r, var)
    }

    #[test]
    fn spells_censor_the_edges() {
        assert_eq!(spells(&[0, 0, 1, 0, 1, 0]), vec![(3.0, true), (2.0, false), (1.0, true)]);
        assert_eq!(spells(&[1, 0, 1]), vec![(2.0, false)]);
    }

    #[test]
    fn profile_matches_full_censored_likelihood() {
        // hits on days 3, 7, 8, 20 of 25: spells 3 (censored), 4, 1, 12, 5 (censored)
        let mut hits = vec![0u8; 25];
        for d in [3, 7, 8, 20] {
            hits[d - 1] = 1;
        }
        let sp = spells(&hits);
        assert_eq!(sp, vec![(3.0, true), (4.0, false), (1.0, false), (12.0, false), (5.0, true)]);
        for b in [0.4, 1.0, 2.7] {
            let a = (3.0 / (3f64.powf(b) + 4f64.powf(b) + 1.0 + 12f64.powf(b) + 5f64.powf(b))).powf(1.0 / b);
            let ln_f = |d: f64| weibull_ln_pdf(d, a, b);
            let ln_s = |d: f64| -(a * d).powf(b);
            let full = ln_s(3.0) + ln_f(4.0) + ln_f(1.0) + ln_f(12.0) + ln_s(5.0);
            assert!((profile_loglik(&sp, b) - full).abs() < 1e-10);
        }
        // shape 1 is the exponential with rate = uncensored count / total time
        let p: f64 = 3.0 / 25.0;
        let expo = -p * 3.0 + 3.0 * p.ln() - p * 17.0 - p * 5.0;
        assert!((profile_loglik(&sp, 1.0) - expo).abs() < 1e-10);
        assert!((weibull_ln_pdf(4.0, p, 1.0) - exponential_ln_pdf(4.0, p)).abs() < 1e-15);
    }

    #[test]
    fn clustered_hits_rejected() {
        let mut hits = vec![0u8; 500];
        for h in &mut hits[240..245] {
            *h = 1;
        }
        let r = duration_test_hits(&HitSequence::from_hits(hits).unwrap(), 0.99).unwrap();
        assert!(r.rejected && r.p_value < 0.01, "{r:?}");
    }

    #[test]
    fn no_hits_is_degenerate() {
        let r = duration_test(&[0.0; 500], &[1.0; 500], 0.01, 0.99).unwrap();
        assert!(r.is_degenerate() && !r.rejected && r.n_hits == 0);
        let r = dq_test(&[0.0; 500], &[1.0; 500], 0.99, DQ_LAGS, 0.99).unwrap();
        assert!(r.is_degenerate() && !r.rejected);
    }

    #[test]
    fn duration_depends_on_hits_only() {
        let mut rng = rng_from_seed(2);
        let (r, v) = iid_hits(500, 0.02, &mut rng);
        let a = duration_test(&r, &v, 0.01, 0.99).unwrap();
        let r2: Vec<f64> = r.iter().map(|x| x * 3.0 - 0.1).collect();
        let v2: Vec<f64> = v.iter().zip(&r).map(|(v, x)| if *x < -v { 3.0 * v } else { 1.0 }).collect();
        assert_eq!(hit_sequence(&r, &v).unwrap(), hit_sequence(&r2, &v2).unwrap());
        assert_eq!(a, duration_test(&r2, &v2, 0.01, 0.99).unwrap());
    }

    #[test]
    fn duration_size() {
        let mut rng = rng_from_seed(11);
        let mut rej = 0;
        for _ in 0..1000 {
            let (r, v) = iid_hits(500, 0.01, &mut rng);
            rej += duration_test(&r, &v, 0.01, 0.99).unwrap().rejected as usize;
        }
        let rate = rej as f64 / 1000.0;
        assert!((rate - 0.01).abs() <= 0.025, "{rate}");
    }

    #[test]
    fn dq_power_against_clustering() {
        let mut rng = rng_from_seed(12);
        let mut rej = 0;
        for _ in 0..1000 {
            let var: Vec<f64> = (0..500).map(|_| 0.5 + rng.random::<f64>()).collect();
            let mut prev = false;
            let r: Vec<f64> = var
                .iter()
                .map(|v| {
                    let p = if prev { 0.3 } else { 0.01 };
                    prev = rng.random::<f64>() < p;
                    if prev { -v - 1.0 } else { 0.0 }
                })
                .collect();
            rej += dq_test(&r, &var, 0.99, DQ_LAGS, 0.99).unwrap().rejected as usize;
        }
        let power = rej as f64 / 1000.0;
        // about three quarters with about seven hits per window
        assert!(power > 0.7, "{power}");
    }

    // The chi-square reference distributions are asymptotic: uniformity is
    // checked where spells are long (duration) and hits plentiful (DQ).
    #[test]
    fn p_values_uniform_in_large_samples() {
        let mut rng = rng_from_seed(13);
        let (mut pd, mut pq) = (Vec::new(), Vec::new());
        for _ in 0..1000 {
            let (r, v) = iid_hits(5000, 0.01, &mut rng);
            pd.push(duration_test(&r, &v, 0.01, 0.99).unwrap().p_value);
            let (r, v) = iid_hits(2000, 0.05, &mut rng);
            pq.push(dq_test(&r, &v, 0.95, DQ_LAGS, 0.99).unwrap().p_value);
        }
        assert!(ks_uniform_statistic(&pd) < 0.08, "{}", ks_uniform_statistic(&pd));
        assert!(ks_uniform_statistic(&pq) < 0.08, "{}", ks_uniform_statistic(&pq));
    }
}
