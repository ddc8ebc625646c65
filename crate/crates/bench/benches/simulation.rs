//! Monte Carlo throughput for both replay modes, plus quadrature-rule
//! construction cost (rebuilt once per solve, so it should stay trivial).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gexp_bench::{band, call, normal, rademacher};
use gexp_core::solver::{solve_lattice, solve_tree, LatticeConfig};
use gexp_core::{simulate_continuous, simulate_discrete};

fn discrete_replay(c: &mut Criterion) {
    let grid = band().sqrt_grid(8).unwrap();
    let payoff = call();
    let vp = solve_tree(&payoff, &grid, &rademacher(), 4).unwrap();
    let mut group = c.benchmark_group("simulate_discrete");
    for paths in [1_000usize, 10_000] {
        group.throughput(Throughput::Elements(paths as u64));
        group.bench_with_input(BenchmarkId::from_parameter(paths), &paths, |b, &paths| {
            b.iter(|| simulate_discrete(&vp, &rademacher(), &payoff, paths, 7).unwrap().mean)
        });
    }
    group.finish();
}

fn continuous_replay(c: &mut Criterion) {
    let grid = band().sqrt_grid(8).unwrap();
    let payoff = call();
    let quad = normal().quadrature(8).unwrap();
    let config = LatticeConfig { compute_richardson: false, ..LatticeConfig::default() };
    let vp = solve_lattice(&payoff, &grid, &quad, 8, &config).unwrap();
    let mut group = c.benchmark_group("simulate_continuous");
    group.sample_size(10);
    for paths in [1_000usize, 5_000] {
        group.throughput(Throughput::Elements(paths as u64));
        group.bench_with_input(BenchmarkId::from_parameter(paths), &paths, |b, &paths| {
            b.iter(|| simulate_continuous(&vp, &payoff, 16, paths, 7).unwrap().mean)
        });
    }
    group.finish();
}

fn quadrature_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("quadrature_build");
    for order in [8usize, 16, 32] {
        group.bench_with_input(BenchmarkId::from_parameter(order), &order, |b, &order| {
            b.iter(|| normal().quadrature(order).unwrap().nodes.len())
        });
    }
    group.finish();
}

criterion_group!(benches, discrete_replay, continuous_replay, quadrature_build);
criterion_main!(benches);
