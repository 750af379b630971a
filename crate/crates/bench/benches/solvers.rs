use std::hint::black_box;

use colar::reduction::{DyadicParams, DyadicTable, GaussianizedMixture, EdgeIndicator, ReductionParams};
use colar::stage1::{admm_solve, svcst, AdmmConfig};
use colar::stage2::{group_lasso_solve, GroupLassoConfig};
use colar::CovarianceKind;
use colar_bench::{default_rho, random_matrix, rng, simulation_covariances};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_svcst(c: &mut Criterion) {
    let mut group = c.benchmark_group("svcst");
    for size in [50, 150, 300] {
        let w = random_matrix(size, size, 0.2, 1);
        group.bench_with_input(BenchmarkId::from_parameter(size), &w, |b, w| {
            b.iter(|| svcst(black_box(w), 2).expect("svcst"))
        });
    }
    group.finish();
}

fn bench_admm(c: &mut Criterion) {
    let mut group = c.benchmark_group("admm");
    group.sample_size(10);
    for p in [50, 100] {
        let n = 200;
        let cov = simulation_covariances(CovarianceKind::Identity, p, n, 2);
        let cfg = AdmmConfig::new(default_rho(p, p, n), 2);
        group.bench_function(BenchmarkId::new("identity", p), |b| {
            b.iter(|| admm_solve(&cov.sx, &cov.sy, black_box(&cov.sxy), &cfg).expect("admm"))
        });
    }
    group.finish();
}

fn bench_group_lasso(c: &mut Criterion) {
    let mut group = c.benchmark_group("group_lasso");
    for p in [100, 300] {
        let n = 500;
        let cov = simulation_covariances(CovarianceKind::Toeplitz, p, n, 3);
        let v0 = random_matrix(p, 2, 0.1, 4);
        let target = &cov.sxy * v0;
        let rho = ((2.0 + (p as f64).ln()) / n as f64).sqrt();
        let cfg = GroupLassoConfig::new(rho);
        group.bench_function(BenchmarkId::from_parameter(p), |b| {
            b.iter(|| group_lasso_solve(&cov.sx, black_box(&target), &cfg).expect("group lasso"))
        });
    }
    group.finish();
}

fn bench_sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("sampling");
    let params = ReductionParams::new(400, 8).expect("params");
    let mix = GaussianizedMixture::new(0.5 * params.mu_bound(), &params).expect("mixture");
    let density = mix.density(EdgeIndicator::Present);
    let mut r = rng(5);
    group.bench_function("gaussianization_rejection", |b| b.iter(|| density.sample(&mut r).expect("draw")));

    let table = DyadicTable::truncated_normal(params.trunc_radius(), DyadicParams::new(8, 40, 3).expect("params"))
        .expect("table");
    let mut r = rng(6);
    group.bench_function("dyadic_table", |b| b.iter(|| table.sample(&mut r)));
    group.finish();
}

criterion_group!(benches, bench_svcst, bench_admm, bench_group_lasso, bench_sampling);
criterion_main!(benches);
