use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use sellopt::kernels::{QuadraticTilt, ShrinkingUniform};
use sellopt::par::{map_indexed, map_indexed_sequential};
use sellopt::revenue::draw_types;
use sellopt::{solve, History, SolveConfig};

fn continuation_table(c: &mut Criterion) {
    let cfg = SolveConfig {
        horizon: 3,
        delta: 0.9,
        n_theta: 101,
        n_distortion: 30,
        ..SolveConfig::default()
    };
    let r = solve(Arc::new(QuadraticTilt::new()), &cfg).unwrap();
    let nl = r.grid.n_distortion();
    let n = r.grid.n_theta() * nl;
    let node = |k: usize| {
        let theta = r.grid.theta_nodes[k / nl];
        let l = r.grid.distortion_nodes[k % nl];
        r.continuation_value(2, theta, l).unwrap()
    };
    let mut g = c.benchmark_group("continuation_table");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| black_box(map_indexed(n, node))));
    g.bench_function("sequential", |b| b.iter(|| black_box(map_indexed_sequential(n, node))));
    g.finish();
}

fn simulated_paths(c: &mut Criterion) {
    let cfg = SolveConfig {
        horizon: 4,
        n_theta: 201,
        n_distortion: 40,
        ..SolveConfig::default()
    };
    let kernel = Arc::new(ShrinkingUniform::new());
    let r = solve(kernel.clone(), &cfg).unwrap();
    let path = |i: usize| {
        let types = draw_types(kernel.as_ref(), 4, 7, i);
        History::from_reports(&r, kernel.as_ref(), &types).sold()
    };
    let mut g = c.benchmark_group("simulated_paths");
    g.bench_function("parallel", |b| b.iter(|| black_box(map_indexed(20_000, path))));
    g.bench_function("sequential", |b| {
        b.iter(|| black_box(map_indexed_sequential(20_000, path)))
    });
    g.finish();
}

fn full_solve(c: &mut Criterion) {
    let cfg = SolveConfig {
        horizon: 4,
        n_theta: 201,
        n_distortion: 40,
        ..SolveConfig::default()
    };
    let kernel: Arc<dyn sellopt::Kernel> = Arc::new(QuadraticTilt::new());
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    g.bench_function("quadratic_tilt_T4", |b| {
        b.iter(|| black_box(solve(kernel.clone(), &cfg).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, continuation_table, simulated_paths, full_solve);
criterion_main!(benches);
