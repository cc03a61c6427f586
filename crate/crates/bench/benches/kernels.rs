use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dflab::meanfield;
use dflab::retraction::{self, RetractionOptions};
use dflab::solvers::{self, SolveOptions};
use dflab_bench::{dirac, free_ground_state};

fn mean_field(c: &mut Criterion) {
    let mut group = c.benchmark_group("mean_field");
    for n in [32, 64, 128] {
        let (m, p) = dirac(n);
        let g = free_ground_state(&m, p.q);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| meanfield::mean_field(black_box(&g), &m, &p).unwrap())
        });
    }
    group.finish();
}

fn retract(c: &mut Criterion) {
    let mut group = c.benchmark_group("retract");
    for n in [32, 64] {
        let (m, p) = dirac(n);
        let g = free_ground_state(&m, p.q);
        let opts = RetractionOptions::with_tol(1e-12 * p.c * p.c);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| retraction::retract(black_box(&g), &m, &p, &opts).unwrap())
        });
    }
    group.finish();
}

fn solve_df(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_df");
    group.sample_size(10);
    let (m, p) = dirac(32);
    let opts = SolveOptions::default();
    group.bench_function("n32", |b| b.iter(|| solvers::solve_df(black_box(&m), &p, &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, mean_field, retract, solve_df);
criterion_main!(benches);
