use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use riskgrid::forecast::var_es_from_sample;
use riskgrid::marginals::{simulate_path, ArmaGarchParams, GarchFamily, InnovationKind, MarginalSpec};
use riskgrid::mcs::{mcs, LossMatrix, McsConfig};
use riskgrid::modelrisk::{dispersion, Measure};

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn bench_var_es(c: &mut Criterion) {
    let xs = normals(10_000, 1);
    c.bench_function("var_es_from_sample/10k", |b| b.iter(|| var_es_from_sample(black_box(&xs), 0.99).unwrap()));
}

fn bench_fit(c: &mut Criterion) {
    let spec = MarginalSpec::new(GarchFamily::Garch, InnovationKind::Normal);
    let x = simulate_path(&ArmaGarchParams::garch(0.05, 0.05, 0.9), &spec, &normals(1000, 2)).unwrap();
    let mut g = c.benchmark_group("fit_marginal");
    g.sample_size(10);
    g.bench_function("garch-norm/1000", |b| b.iter(|| riskgrid::marginals::fit_marginal(black_box(&x), spec).unwrap()));
    g.finish();
}

fn bench_mcs(c: &mut Criterion) {
    let cols: Vec<Vec<f64>> = (0..10).map(|m| normals(250, 10 + m).iter().map(|z| 1.0 + 0.05 * m as f64 + z.abs()).collect()).collect();
    let losses = LossMatrix::new(cols).unwrap();
    let cfg = McsConfig { bootstrap_n: 500, ..McsConfig::default() };
    let mut g = c.benchmark_group("mcs");
    g.sample_size(10);
    g.bench_function("10x250", |b| b.iter(|| mcs(black_box(&losses), &cfg).unwrap()));
    g.finish();
}

fn bench_dispersion(c: &mut Criterion) {
    let xs = normals(64, 3);
    for m in [Measure::Mad, Measure::Sd, Measure::Iqr] {
        c.bench_function(&format!("dispersion/{m:?}"), |b| b.iter(|| dispersion(black_box(&xs), m).unwrap()));
    }
}

criterion_group!(benches, bench_var_es, bench_fit, bench_mcs, bench_dispersion);
criterion_main!(benches);
