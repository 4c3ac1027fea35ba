use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lpi_bench::garnet_fixture;
use lpi_core::projection::{build_projected_coefficients, solve_projected_equation};
use lpi_core::{apply_t, apply_t_mu_lambda, exact_policy_iteration, CostVector, Policy, StateDistribution};

fn bellman(c: &mut Criterion) {
    let mut group = c.benchmark_group("bellman");
    for n in [50, 200, 800] {
        let (mdp, mu, _) = garnet_fixture(n, 1);
        let j = CostVector::from_fn(n, |i, _| (i as f64).sin());
        group.bench_with_input(BenchmarkId::new("apply_t", n), &j, |b, j| {
            b.iter(|| apply_t(&mdp, black_box(j)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("apply_t_mu_lambda", n), &j, |b, j| {
            b.iter(|| apply_t_mu_lambda(&mdp, &mu, 0.7, black_box(j)).unwrap())
        });
    }
    group.finish();
}

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("solvers");
    group.sample_size(20);
    for n in [50, 200] {
        let (mdp, mu, basis) = garnet_fixture(n, 2);
        group.bench_function(BenchmarkId::new("exact_policy_iteration", n), |b| {
            b.iter(|| exact_policy_iteration(&mdp, &Policy::first_controls(&mdp)).unwrap())
        });
        let xi = StateDistribution::uniform(n);
        group.bench_function(BenchmarkId::new("projected_equation", n), |b| {
            b.iter(|| {
                let eq = build_projected_coefficients(&mdp, &mu, &basis, &xi, 0.7).unwrap();
                solve_projected_equation(&eq).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bellman, solvers);
criterion_main!(benches);
