use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use elast_bench::{bench_dream_config, wedge_data};
use elast_core::baseline::{ols_loglog, ppml, PPML_MAX_ITER, PPML_TOL};
use elast_core::dream;

fn baselines(c: &mut Criterion) {
    let mut group = c.benchmark_group("baseline");
    for n in [1_000usize, 10_000] {
        let data = wedge_data(n, 1);
        group.bench_with_input(BenchmarkId::new("ols", n), &data, |b, d| {
            b.iter(|| ols_loglog(black_box(d)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("ppml", n), &data, |b, d| {
            b.iter(|| ppml(black_box(d), PPML_MAX_ITER, PPML_TOL).unwrap())
        });
    }
    group.finish();
}

fn dream_small(c: &mut Criterion) {
    let data = wedge_data(500, 2);
    let cfg = bench_dream_config();
    let mut group = c.benchmark_group("dream");
    group.sample_size(10);
    group.bench_function("estimate_n500_k2", |b| {
        b.iter(|| dream::estimate(black_box(&data), 2, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, baselines, dream_small);
criterion_main!(benches);
