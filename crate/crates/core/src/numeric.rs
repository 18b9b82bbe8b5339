//! Small numerical toolbox: double-exponential quadrature, bracketing root
//! finders, Brent minimisation and Nelder–Mead simplex search.

use std::f64::consts::FRAC_PI_2;

const QUAD_MAX_LEVEL: usize = 9;
const QUAD_REL_TOL: f64 = 1e-12;

/// Integrates `f` over `[a, b]`; either bound may be infinite.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if a > b {
        return -integrate(f, b, a);
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) => {
                        let d = 0.5 * (b - a);
            de_sum(
                |t| {
                    let s = FRAC_PI_2 * t.sinh();
                    // distance to the nearer endpoint, computed without cancellation
                    let x = if s < 0.0 {
                        a + d * 2.0 / (1.0 + (-2.0 * s).exp())
                    } else {
                        b - d * 2.0 / (1.0 + (2.0 * s).exp())
                    };
                    let w = d * FRAC_PI_2 * t.cosh() / (s.cosh() * s.cosh());
                    (x, w)
                },
                |x| if x <= a || x >= b { 0.0 } else { f(x) },
                4.0,
            )
        }
        (true, false) => de_sum(
            |t| {
                let e = (FRAC_PI_2 * t.sinh()).exp();
                (a + e, FRAC_PI_2 * t.cosh() * e)
            },
            |x| if x <= a { 0.0 } else { f(x) },
            4.5,
        ),
        (false, true) => de_sum(
            |t| {
                let e = (FRAC_PI_2 * t.sinh()).exp();
                (b - e, FRAC_PI_2 * t.cosh() * e)
            },
            |x| if x >= b { 0.0 } else { f(x) },
            4.5,
        ),
        (false, false) => de_sum(
            |t| {
                let s = FRAC_PI_2 * t.sinh();
                (s.sinh(), FRAC_PI_2 * t.cosh() * s.cosh())
            },
            f,
            4.5,
        ),
    }
}

/// Trapezoidal sum over a double-exponential change of variables, halving the
/// step until successive estimates agree.
fn de_sum<M, F>(map: M, f: F, t_max: f64) -> f64
where
    M: Fn(f64) -> (f64, f64),
    F: Fn(f64) -> f64,
{
    let term = |t: f64| -> f64 {
        let (x, w) = map(t);
        if !x.is_finite() || !w.is_finite() || w == 0.0 {
            return 0.0;
        }
        let v = f(x) * w;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut h = 0.5;
    let n0 = (t_max / h).ceil() as i64;
    let mut sum: f64 = (-n0..=n0).map(|k| term(k as f64 * h)).sum();
    let mut estimate = sum * h;
    for _ in 0..QUAD_MAX_LEVEL {
        h *= 0.5;
        let n = (t_max / h).ceil() as i64;
        let mut add = 0.0;
        let mut k = -n + if n % 2 == 0 { 1 } else { 0 };
        while k <= n {
            add += term(k as f64 * h);
            k += 2;
        }
        sum += add;
        let next = sum * h;
        let diff = (next - estimate).abs();
        estimate = next;
        if diff <= QUAD_REL_TOL * next.abs() || diff < 1e-300 {
            break;
        }
    }
    estimate
}

/// Brent–Dekker root finding on a sign-changing bracket.
pub fn brent_root<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return None;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Some(b)
}

/// Plain bisection of an increasing function on `[lo, hi]` for `f(x) = target`.
pub fn bisect_increasing<F: Fn(f64) -> f64>(f: F, target: f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Inverts a continuous CDF on the real line: bracket expansion then
/// safeguarded Newton steps using the density.
pub fn invert_cdf<C, D>(cdf: C, pdf: D, p: f64, start: f64) -> f64
where
    C: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut lo = start - 1.0;
    let mut hi = start + 1.0;
    let mut step = 1.0;
    while cdf(lo) > p {
        step *= 2.0;
        lo = start - step;
        if step > 1e300 {
            return f64::NEG_INFINITY;
        }
    }
    step = 1.0;
    while cdf(hi) < p {
        step *= 2.0;
        hi = start + step;
        if step > 1e300 {
            return f64::INFINITY;
        }
    }
    let mut x = start.clamp(lo, hi);
    for _ in 0..200 {
        let fx = cdf(x) - p;
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = pdf(x);
        let mut next = if d > 0.0 && d.is_finite() { x - fx / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
            return next;
        }
        x = next;
    }
    x
}

/// Brent's derivative-free minimisation on `[a, b]`. Returns `(x, f(x))`.
pub fn brent_minimize<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    const CGOLD: f64 = 0.381_966_011_250_105;
    let mut x = a + CGOLD * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if !(p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Relative tolerance on the spread of objective values across the simplex.
    pub f_tol: f64,
    /// Absolute tolerance on the simplex diameter.
    pub x_tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            f_tol: 1e-8,
            x_tol: 1e-6,
            max_iter: 500,
            initial_step: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead minimisation with adaptive coefficients (Gao & Han), which
/// behave better than the textbook ones beyond a handful of dimensions.
/// Non-finite objective values are treated as `+inf`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &SimplexOptions) -> SimplexResult {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma) = (1.0, 1.0 + 2.0 / nf);
    let rho = 0.75 - 1.0 / (2.0 * nf);
    let sigma = 1.0 - 1.0 / nf;
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += if x[i].abs() > 1e-8 {
            opts.initial_step * x[i].abs().max(1.0)
        } else {
            opts.initial_step
        };
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();
    let mut order: Vec<usize> = (0..=n).collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second = order[n - 1];

        let f_best = values[best];
        let spread = values[worst] - f_best;
        let diameter = simplex
            .iter()
            .flat_map(|x| x.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_best.is_finite() && spread <= opts.f_tol * (f_best.abs() + 1e-10) && diameter <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for &i in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                *c += v / nf;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr);
        if fr < values[best] {
            let xe = along(gamma);
            let fe = eval(&xe);
            if fe < fr {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second] {
            simplex[worst] = xr;
            values[worst] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[worst] {
            let xc = along(rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < values[worst].min(fr) {
            simplex[worst] = xc;
            values[worst] = fc;
            continue;
        }
        let xb = simplex[best].clone();
        for &i in &order[1..] {
            let shrunk: Vec<f64> = xb
                .iter()
                .zip(&simplex[i])
                .map(|(b, x)| b + sigma * (x - b))
                .collect();
            values[i] = eval(&shrunk);
            simplex[i] = shrunk;
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    SimplexResult {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        converged,
    }
}
