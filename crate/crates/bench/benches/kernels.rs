use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qfield_core::modulus::{entropy_integral, modulus_sweep, Ladder};
use qfield_core::verify::conditional_variance_schur;
use qfield_core::{CholeskySampler, DyadicGrid, FieldModel, GaugeSpec, GridCovariance};

fn model(nu: f64, d: usize) -> FieldModel {
    FieldModel::cube(GaugeSpec::power_law(nu, 1.0).unwrap(), d, 0.0, 1.0).unwrap()
}

fn cov1d(c: &mut Criterion) {
    let mut group = c.benchmark_group("cov1d");
    for nu in [0.25, 0.5] {
        let m = model(nu, 1);
        group.bench_with_input(BenchmarkId::from_parameter(nu), &m, |b, m| {
            b.iter(|| m.cov1d(black_box(0.3), black_box(0.8)).unwrap())
        });
    }
    let lm = FieldModel::cube(GaugeSpec::log_modulated(0.5, 1.0).unwrap(), 1, 0.0, 0.1).unwrap();
    group.bench_function("log_modulated", |b| {
        b.iter(|| lm.cov1d(black_box(0.03), black_box(0.08)).unwrap())
    });
    group.finish();
}

fn gram_and_factor(c: &mut Criterion) {
    let mut group = c.benchmark_group("gram");
    group.sample_size(10);
    let m = model(0.25, 1);
    for n in [6u32, 8] {
        let grid = DyadicGrid::new(&m, n).unwrap();
        let pts = grid.points();
        group.bench_with_input(BenchmarkId::new("fill", grid.len()), &pts, |b, pts| {
            b.iter(|| m.gram(pts).unwrap())
        });
        group.bench_with_input(
            BenchmarkId::new("cholesky", grid.len()),
            &grid,
            |b, grid| b.iter(|| CholeskySampler::for_grid(&m, grid, 1 << 14).unwrap()),
        );
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("modulus_sweep");
    group.sample_size(10);
    let m = model(0.5, 1);
    let grid = DyadicGrid::new(&m, 10).unwrap();
    let sampler = CholeskySampler::for_grid(&m, &grid, 1 << 12).unwrap();
    let values: Vec<Vec<f64>> = (0..4).map(|r| sampler.draw_values(1, r)).collect();
    let cov = GridCovariance::new(&m, &grid).unwrap();
    let ladder = Ladder::for_grid(&m, &grid).unwrap();
    group.bench_function("brownian_n10_x4", |b| {
        b.iter(|| modulus_sweep(&m, &grid, &cov, &values, &ladder, Some(1.0)).unwrap())
    });
    group.finish();
}

fn conditioning(c: &mut Criterion) {
    let m = model(0.25, 2);
    let x = [0.9, 0.8];
    let preds: Vec<Vec<f64>> = (1..=6)
        .map(|k| vec![0.5 + 0.05 * k as f64, 0.45 + 0.05 * k as f64])
        .collect();
    c.bench_function("condvar_schur_d2_n6", |b| {
        b.iter(|| conditional_variance_schur(&m, black_box(&x), &preds).unwrap())
    });
}

fn entropy(c: &mut Criterion) {
    let g = GaugeSpec::power_law(0.25, 1.0).unwrap();
    c.bench_function("entropy_integral", |b| {
        b.iter(|| entropy_integral(&g, 1.5, black_box(0.2)).unwrap())
    });
}

criterion_group!(
    benches,
    cov1d,
    gram_and_factor,
    sweep,
    conditioning,
    entropy
);
criterion_main!(benches);
