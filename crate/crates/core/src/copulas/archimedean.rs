//! Exchangeable Archimedean copulas in any dimension, simulated by the
//! Marshall-Olkin frailty construction.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use statrs::function::gamma::ln_gamma;

use super::pair::{clamp_unit, PairCopula, PairFamily};

/// Laplace transform of the frailty (the generator inverse).
fn psi(family: PairFamily, theta: f64, t: f64) -> f64 {
    match family {
        PairFamily::Clayton => (1.0 + t).powf(-1.0 / theta),
        PairFamily::Gumbel => (-t.powf(1.0 / theta)).exp(),
        PairFamily::Frank => {
            // -ln(1 - (1 - e^-theta) e^-t) / theta
            -((-theta).exp_m1() * (-t).exp()).ln_1p() / theta
        }
        PairFamily::Joe => 1.0 - (-(-t).exp_m1()).powf(1.0 / theta),
        _ => unreachable!("not an Archimedean family"),
    }
}

/// Positive stable variable with Laplace transform `exp(-t^alpha)`
/// (Kanter's representation).
fn positive_stable<R: Rng>(alpha: f64, rng: &mut R) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let u: f64 = rng.random::<f64>() * PI;
    let w: f64 = rng.sample(Exp1);
    (alpha * u).sin() / u.sin().powf(1.0 / alpha) * (((1.0 - alpha) * u).sin() / w).powf((1.0 - alpha) / alpha)
}

/// Logarithmic-series variable with parameter `p = 1 - exp(-theta)`
/// (Kemp's algorithm LK).
fn log_series<R: Rng>(theta: f64, rng: &mut R) -> f64 {
    let p = -(-theta).exp_m1();
    let u2: f64 = rng.random();
    if u2 > p {
        return 1.0;
    }
    let u1: f64 = rng.random();
    let q = -(-theta * u1).exp_m1();
    if u2 < q * q {
        (1.0 + u2.ln() / q.ln()).floor().max(1.0)
    } else if u2 > q {
        1.0
    } else {
        2.0
    }
}

/// Sibuya variable with parameter `alpha = 1/theta`, by inverting its
/// survival function `P(V > n) = Gamma(n + 1 - alpha) / (Gamma(n + 1) Gamma(1 - alpha))`.
fn sibuya<R: Rng>(alpha: f64, rng: &mut R) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let u: f64 = rng.random();
    let c = ln_gamma(1.0 - alpha);
    let ln_surv = |n: f64| ln_gamma(n + 1.0 - alpha) - ln_gamma(n + 1.0) - c;
    let lu = u.ln();
    if ln_surv(1.0) <= lu {
        return 1.0;
    }
    let cap = 1e15;
    let mut lo = 1.0;
    let mut hi = 2.0;
    while ln_surv(hi) > lu {
        lo = hi;
        hi *= 2.0;
        if hi > cap {
            return cap;
        }
    }
    // smallest n in (lo, hi] with surv(n) <= u
    while hi - lo > 1.0 {
        let mid = ((lo + hi) / 2.0).floor();
        if ln_surv(mid) <= lu {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub fn simulate_archimedean<R: Rng>(family: PairFamily, theta: f64, dim: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    if dim == 2 && family == PairFamily::Frank && theta < 0.0 {
        let pc = PairCopula { family, rotation: 0, par: theta, par2: 0.0 };
        let (u, v) = pc.simulate(n, rng);
        return DMatrix::from_fn(n, 2, |i, j| if j == 0 { u[i] } else { v[i] });
    }
    let gamma = if family == PairFamily::Clayton {
        Some(Gamma::new(1.0 / theta, 1.0).expect("positive clayton theta"))
    } else {
        None
    };
    let mut out = DMatrix::zeros(n, dim);
    for i in 0..n {
        let v = match family {
            PairFamily::Clayton => gamma.as_ref().unwrap().sample(rng),
            PairFamily::Gumbel => positive_stable(1.0 / theta, rng),
            PairFamily::Frank => log_series(theta, rng),
            PairFamily::Joe => sibuya(1.0 / theta, rng),
            _ => unreachable!(),
        };
        for j in 0..dim {
            let e: f64 = rng.sample(Exp1);
            out[(i, j)] = clamp_unit(psi(family, theta, e / v));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::stats::{kendall_tau, ks_p_value, ks_uniform_statistic, mean};

    #[test]
    fn frailty_samplers_hit_their_laplace_transforms() {
        let mut rng = rng_from_seed(3);
        let n = 40_000;
        let t = 0.7;
        for (fam, theta) in [(PairFamily::Gumbel, 2.0), (PairFamily::Frank, 5.0), (PairFamily::Joe, 3.0), (PairFamily::Clayton, 1.5)] {
            let draws: Vec<f64> = (0..n)
                .map(|_| match fam {
                    PairFamily::Gumbel => positive_stable(1.0 / theta, &mut rng),
                    PairFamily::Frank => log_series(theta, &mut rng),
                    PairFamily::Joe => sibuya(1.0 / theta, &mut rng),
                    _ => Gamma::new(1.0 / theta, 1.0).unwrap().sample(&mut rng),
                })
                .collect();
            let lt = mean(&draws.iter().map(|v| (-t * v).exp()).collect::<Vec<_>>());
            assert!((lt - psi(fam, theta, t)).abs() < 0.01, "{fam:?}: {lt} vs {}", psi(fam, theta, t));
        }
    }

    #[test]
    fn margins_uniform_and_tau_matches() {
        let mut rng = rng_from_seed(9);
        for (fam, theta) in [(PairFamily::Clayton, 2.0), (PairFamily::Gumbel, 2.0), (PairFamily::Frank, 5.0), (PairFamily::Joe, 2.5)] {
            let u = simulate_archimedean(fam, theta, 3, 5000, &mut rng);
            for j in 0..3 {
                let col: Vec<f64> = u.column(j).iter().copied().collect();
                let d = ks_uniform_statistic(&col);
                assert!(ks_p_value(d, col.len()) > 0.001, "{fam:?} margin {j}");
            }
            let a: Vec<f64> = u.column(0).iter().copied().collect();
            let b: Vec<f64> = u.column(2).iter().copied().collect();
            let expected = PairCopula { family: fam, rotation: 0, par: theta, par2: 0.0 }.tau();
            assert!((kendall_tau(&a, &b) - expected).abs() < 0.03, "{fam:?}");
        }
    }
}
