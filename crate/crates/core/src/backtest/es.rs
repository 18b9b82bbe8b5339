use rand::Rng;

use super::{aligned, check_conf, check_coverage, BacktestResult, TestKind};
use crate::rng::rng_from_seed;
use crate::stats::norm_cdf;
use crate::{Error, Result};

/// Hommel's step-up adjusted global p-value for a family of p-values.
pub fn hommel_combined(p: &[f64]) -> f64 {
    let m = p.len();
    if m == 0 {
        return 1.0;
    }
    let mut s = p.to_vec();
    s.sort_by(f64::total_cmp);
    // global null: reject at alpha iff p_(i) <= i alpha / m for some i
    s.iter()
        .enumerate()
        .map(|(i, &pi)| pi * m as f64 / (i + 1) as f64)
        .fold(1.0, f64::min)
}

/// Identification function of (VaR, ES) at `level` for a loss (negated
/// return): `(1 - level - 1{loss > var}, var - es + 1{loss > var} (loss - var) / (1 - level))`.
/// Both components have conditional mean zero under correct forecasts.
pub fn cc_identification(loss: f64, var: f64, es: f64, level: f64) -> [f64; 2] {
    let alpha = 1.0 - level;
    let h = if loss > var { 1.0 } else { 0.0 };
    [alpha - h, var - es + h * (loss - var) / alpha]
}

/// Conditional calibration test, simple version, one-sided against risk
/// understatement. Works on losses `-r`: the VaR component is
/// `(1 - level) - 1{loss > VaR}` and the ES component is
/// `VaR - ES + 1{loss > VaR} (loss - VaR) / (1 - level)`.
pub fn cc_test(returns: &[f64], var: &[f64], es: &[f64], level: f64, conf: f64) -> Result<BacktestResult> {
    aligned(returns.len(), var.len())?;
    aligned(returns.len(), es.len())?;
    check_conf(conf)?;
    let alpha = 1.0 - level;
    check_coverage(alpha)?;
    let n = returns.len();
    if n < 2 {
        return Err(Error::TooShort { need: 2, got: n });
    }
    if let Some(i) = (0..n).find(|&i| es[i] < var[i]) {
        return Err(Error::invalid(format!("ES below VaR at position {i}")));
    }
    let mut v1 = Vec::with_capacity(n);
    let mut v2 = Vec::with_capacity(n);
    let mut n_hits = 0;
    for i in 0..n {
        let loss = -returns[i];
        n_hits += usize::from(loss > var[i]);
        let [a, b] = cc_identification(loss, var[i], es[i], level);
        v1.push(a);
        v2.push(b);
    }
    if n_hits == 0 {
        return Ok(BacktestResult::degenerate(TestKind::Cc, 0, "no exceedances"));
    }
    let t_stat = |v: &[f64]| -> Option<f64> {
        let m = v.iter().sum::<f64>() / n as f64;
        let var_mean = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n * n) as f64;
        (var_mean > 1e-300).then(|| m / var_mean.sqrt())
    };
    let (Some(t1), Some(t2)) = (t_stat(&v1), t_stat(&v2)) else {
        return Ok(BacktestResult::degenerate(TestKind::Cc, n_hits, "zero-variance component"));
    };
    // understatement drives the VaR component negative and the ES one positive
    let p1 = norm_cdf(t1);
    let p2 = norm_cdf(-t2);
    let p = hommel_combined(&[p1, p2]);
    Ok(BacktestResult::decided(TestKind::Cc, t1.abs().max(t2.abs()), p, n_hits, conf))
}

fn studentized_mean(y: &[f64]) -> Option<f64> {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let v = y.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (v > 0.0).then(|| m / (v / n).sqrt())
}

/// Exceedance residual test: residuals `loss - ES` on VaR exceedance days
/// should have mean zero; one-sided against ES understatement with a
/// bootstrap of the studentized mean of the centred residuals.
pub fn er_test(returns: &[f64], var: &[f64], es: &[f64], bootstrap_n: usize, seed: u64, conf: f64) -> Result<BacktestResult> {
    aligned(returns.len(), var.len())?;
    aligned(returns.len(), es.len())?;
    check_conf(conf)?;
    if bootstrap_n == 0 {
        return Err(Error::invalid("bootstrap_n must be positive"));
    }
    let y: Vec<f64> = (0..returns.len())
        .filter(|&i| -returns[i] > var[i])
        .map(|i| -returns[i] - es[i])
        .collect();
    let n_hits = y.len();
    if n_hits < 2 {
        return Ok(BacktestResult::degenerate(TestKind::Er, n_hits, "fewer than two exceedances"));
    }
    let Some(t) = studentized_mean(&y) else {
        return Ok(BacktestResult::degenerate(TestKind::Er, n_hits, "constant residuals"));
    };
    let m = y.iter().sum::<f64>() / n_hits as f64;
    let centred: Vec<f64> = y.iter().map(|x| x - m).collect();
    let mut rng = rng_from_seed(seed);
    let mut buf = vec![0.0; n_hits];
    let mut exceed = 0usize;
    for _ in 0..bootstrap_n {
        for b in buf.iter_mut() {
            *b = centred[rng.random_range(0..n_hits)];
        }
        // constant resamples carry no spread; count them as not exceeding
        if studentized_mean(&buf).is_some_and(|tb| tb >= t) {
            exceed += 1;
        }
    }
    let p = exceed as f64 / bootstrap_n as f64;
    Ok(BacktestResult::decided(TestKind::Er, t, p, n_hits, conf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginals::Innovation;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal, StudentT};

    #[test]
    fn hommel_two_values() {
        assert_eq!(hommel_combined(&[0.004, 0.5]), 0.008);
        assert_eq!(hommel_combined(&[0.03, 0.04]), 0.04);
        assert_eq!(hommel_combined(&[0.6, 0.9]), 0.9);
    }

    /// Heavy-tailed losses with the exact unit-variance t(5) VaR/ES.
    fn t5_window(rng: &mut impl rand::Rng, n: usize, level: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let nu = 5.0;
        let dist = Innovation::StudentT { nu };
        let scale = ((nu - 2.0) / nu).sqrt();
        let q = -dist.quantile(1.0 - level).unwrap();
        let e = -dist.tail_mean(1.0 - level);
        let t = StudentT::new(nu).unwrap();
        let r: Vec<f64> = (0..n).map(|_| t.sample(rng) * scale).collect();
        (r, vec![q; n], vec![e; n])
    }

    #[test]
    fn identification_hand_values() {
        assert_eq!(cc_identification(1.0, 2.0, 2.5, 0.975), [0.025000000000000022, -0.5]);
        let [a, b] = cc_identification(3.0, 2.0, 2.5, 0.975);
        assert!((a + 0.975).abs() < 1e-15);
        assert!((b - 39.5).abs() < 1e-12);
        // a loss exactly at VaR is not an exceedance
        assert_eq!(cc_identification(2.0, 2.0, 2.5, 0.975)[0], 1.0 - 0.975);
    }

    #[test]
    fn cc_size_and_power() {
        let mut rng = rng_from_seed(31);
        let (mut size, mut power) = (0, 0);
        for _ in 0..1000 {
            let (r, v, e) = t5_window(&mut rng, 500, 0.975);
            size += cc_test(&r, &v, &e, 0.975, 0.99).unwrap().rejected as usize;
            let half: Vec<f64> = e.iter().map(|x| x / 2.0).collect();
            let v_half: Vec<f64> = v.iter().zip(&half).map(|(v, h)| v.min(*h)).collect();
            power += cc_test(&r, &v_half, &half, 0.975, 0.99).unwrap().rejected as usize;
        }
        let (size, power) = (size as f64 / 1000.0, power as f64 / 1000.0);
        assert!((size - 0.01).abs() <= 0.025, "size {size}");
        assert!(power > 0.5, "power {power}");
    }

    #[test]
    fn cc_without_exceedances_is_degenerate() {
        let r = cc_test(&[0.0; 500], &[1.0; 500], &[2.0; 500], 0.975, 0.99).unwrap();
        assert!(r.is_degenerate() && !r.rejected);
        assert!(cc_test(&[0.0; 3], &[1.0; 3], &[0.5; 3], 0.975, 0.99).is_err());
    }

    #[test]
    fn er_size_power_and_determinism() {
        // standard normal returns with exact 97.5% VaR/ES; keep windows with
        // at least ten exceedances
        let (var, es) = (1.959_963_984_540_054, 2.337_802_290_935_427);
        let mut rng = rng_from_seed(41);
        let (mut reps, mut size, mut power) = (0, 0, 0);
        while reps < 500 {
            let r: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            if r.iter().filter(|&&x| -x > var).count() < 10 {
                continue;
            }
            let seed = reps as u64;
            reps += 1;
            size += er_test(&r, &[var; 500], &[es; 500], 1000, seed, 0.99).unwrap().rejected as usize;
            power += er_test(&r, &[var; 500], &[es - 0.5; 500], 1000, seed, 0.99).unwrap().rejected as usize;
        }
        let (size, power) = (size as f64 / 500.0, power as f64 / 500.0);
        assert!((size - 0.01).abs() <= 0.025, "size {size}");
        assert!(power > 0.6, "power {power}");

        let r: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let a = er_test(&r, &[var; 500], &[es; 500], 1000, 9, 0.99).unwrap();
        assert_eq!(a, er_test(&r, &[var; 500], &[es; 500], 1000, 9, 0.99).unwrap());
    }

    #[test]
    fn er_single_exceedance_is_degenerate() {
        let mut r = vec![0.0; 500];
        r[10] = -3.0;
        let res = er_test(&r, &[1.0; 500], &[2.0; 500], 1000, 1, 0.99).unwrap();
        assert!(res.is_degenerate() && res.n_hits == 1);
    }
}
