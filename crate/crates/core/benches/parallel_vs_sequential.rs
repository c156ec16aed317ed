use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use resque::harness::{run_experiment, ExperimentConfig};
use resque::par;
use resque::problem_core::{make_synthetic_objective_n, oracle_query_flat, ObjectiveKind, QueryLedger, SubsampledOracle};
use resque::resque::presample_flat;

const ROWS: usize = 1 << 15;

fn threads() -> Vec<(&'static str, usize)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    vec![("sequential", 1), ("parallel", all)]
}

fn oracle_batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle_batch");
    group.sample_size(20);
    for d in [4, 16] {
        let fx = make_synthetic_objective_n(ObjectiveKind::AbsRegression, d, 512, 0).unwrap();
        let data = fx.dataset.unwrap();
        let points = presample_flat(0.1, d, ROWS, 1);
        for (name, t) in threads() {
            group.bench_with_input(BenchmarkId::new(name, d), &d, |b, &d| {
                b.iter(|| {
                    par::with_threads(t, || {
                        let mut ledger = QueryLedger::new();
                        black_box(oracle_query_flat(&SubsampledOracle(&data), &points, d, &mut ledger, "bench", 3).unwrap())
                    })
                })
            });
        }
    }
    group.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let mut cfg = ExperimentConfig { kappas: vec![4.0], seeds: (0..4).collect(), ..Default::default() };
    cfg.constants.c_ba = 3.0;
    cfg.c_agg = 1.0;
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    for (name, t) in threads() {
        group.bench_function(name, |b| b.iter(|| par::with_threads(t, || black_box(run_experiment(&cfg).unwrap()))));
    }
    group.finish();
}

criterion_group!(benches, oracle_batch, seed_sweep);
criterion_main!(benches);
