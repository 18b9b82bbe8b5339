use crate::stats::norm_cdf;
use crate::{Error, Result};

const MIN_LENGTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HacTest {
    pub t_stat: f64,
    pub p_value: f64,
    pub lag: usize,
}

/// Pilot lag `floor(4 (T/100)^(2/9))` of the automatic bandwidth rule.
pub fn newey_west_lag(t: usize) -> usize {
    (4.0 * (t as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

fn autocov(u: &[f64], j: usize) -> f64 {
    let n = u.len();
    (j..n).map(|t| u[t] * u[t - j]).sum::<f64>() / n as f64
}

/// Bartlett-kernel long-run variance of `x` with the lag chosen by the
/// automatic plug-in rule. Returns `(variance, lag)`.
pub fn long_run_variance(x: &[f64]) -> (f64, usize) {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let u: Vec<f64> = x.iter().map(|v| v - m).collect();
    let pilot = newey_west_lag(n).min(n - 1);
    let g: Vec<f64> = (0..=pilot).map(|j| autocov(&u, j)).collect();
    let s0 = g[0] + 2.0 * g[1..].iter().sum::<f64>();
    let s1 = 2.0 * g.iter().enumerate().skip(1).map(|(j, v)| j as f64 * v).sum::<f64>();
    let lag = if s0 > 0.0 {
        let gamma = 1.1447 * ((s1 / s0).powi(2)).cbrt();
        ((gamma * (n as f64).cbrt()).floor() as usize).min(n - 1)
    } else {
        0
    };
    let mut v = autocov(&u, 0);
    for j in 1..=lag {
        v += 2.0 * (1.0 - j as f64 / (lag + 1) as f64) * autocov(&u, j);
    }
    (v.max(0.0), lag)
}

fn two_sided(t: f64) -> f64 {
    (2.0 * norm_cdf(-t.abs())).min(1.0)
}

/// Difference in means of two aligned daily series, with the Newey-West
/// variance of the daily differences.
pub fn hac_ttest(a: &[f64], b: &[f64]) -> Result<HacTest> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), got: b.len() });
    }
    if a.len() < MIN_LENGTH {
        return Err(Error::TooShort { need: MIN_LENGTH, got: a.len() });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let (v, lag) = long_run_variance(&d);
    if v == 0.0 {
        let t = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return Ok(HacTest { t_stat: t, p_value: two_sided(t), lag });
    }
    let t = mean / (v / n).sqrt();
    Ok(HacTest { t_stat: t, p_value: two_sided(t), lag })
}

/// Difference in means of two disjoint samples (e.g. two periods of one
/// series), each with its own Newey-West variance.
pub fn hac_ttest_periods(a: &[f64], b: &[f64]) -> Result<HacTest> {
    for s in [a, b] {
        if s.len() < MIN_LENGTH {
            return Err(Error::TooShort { need: MIN_LENGTH, got: s.len() });
        }
    }
    let (va, la) = long_run_variance(a);
    let (vb, lb) = long_run_variance(b);
    let diff = a.iter().sum::<f64>() / a.len() as f64 - b.iter().sum::<f64>() / b.len() as f64;
    let se2 = va / a.len() as f64 + vb / b.len() as f64;
    let t = if se2 > 0.0 {
        diff / se2.sqrt()
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    Ok(HacTest { t_stat: t, p_value: two_sided(t), lag: la.max(lb) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn identical_series() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let r = hac_ttest(&a, &a).unwrap();
        assert_eq!((r.t_stat, r.p_value), (0.0, 1.0));
        assert!(hac_ttest(&a[..5], &a[..5]).is_err());
    }

    #[test]
    fn pilot_lag() {
        assert_eq!(newey_west_lag(100), 4);
        assert_eq!(newey_west_lag(1000), 6);
        assert_eq!(newey_west_lag(3500), 8);
    }

    #[test]
    fn lrv_of_white_noise_near_variance() {
        let mut rng = rng_from_seed(4);
        let x: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let (v, _) = long_run_variance(&x);
        assert!((v - 1.0).abs() < 0.05);
        // AR(1) rho 0.5: long-run variance 1 / (1 - rho)^2 = 4 (unit shocks)
        let mut y = vec![0.0; 50_000];
        for t in 1..y.len() {
            y[t] = 0.5 * y[t - 1] + rng.sample::<f64, _>(StandardNormal);
        }
        let (v, _) = long_run_variance(&y);
        assert!((v - 4.0).abs() < 0.4, "{v}");
    }

    fn ar1(rng: &mut impl Rng, n: usize, rho: f64) -> Vec<f64> {
        let mut x = vec![0.0; n];
        x[0] = rng.sample::<f64, _>(StandardNormal) / (1.0 - rho * rho).sqrt();
        for t in 1..n {
            x[t] = rho * x[t - 1] + rng.sample::<f64, _>(StandardNormal);
        }
        x
    }

    #[test]
    fn size_and_serial_correlation_robustness() {
        let mut rng = rng_from_seed(8);
        let (mut iid, mut hac, mut naive) = (0, 0, 0);
        for _ in 0..1000 {
            let a = ar1(&mut rng, 1000, 0.0);
            let b = ar1(&mut rng, 1000, 0.0);
            iid += (hac_ttest(&a, &b).unwrap().p_value < 0.05) as usize;
            let a = ar1(&mut rng, 1000, 0.8);
            let b = ar1(&mut rng, 1000, 0.8);
            hac += (hac_ttest(&a, &b).unwrap().p_value < 0.05) as usize;
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let m = d.iter().sum::<f64>() / 1000.0;
            let s2 = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 999.0;
            naive += (two_sided(m / (s2 / 1000.0).sqrt()) < 0.05) as usize;
        }
        let (iid, hac, naive) = (iid as f64 / 1000.0, hac as f64 / 1000.0, naive as f64 / 1000.0);
        assert!((iid - 0.05).abs() <= 0.02, "{iid}");
        assert!(hac <= 0.10, "{hac}");
        assert!(naive >= 0.15, "{naive}");
    }

    #[test]
    fn disjoint_periods() {
        let mut rng = rng_from_seed(9);
        let a: Vec<f64> = (0..300).map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let r = hac_ttest_periods(&a, &b).unwrap();
        assert!(r.t_stat > 5.0 && r.p_value < 1e-6);
    }
}
