use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use openturb::sde::{linear_times, simulate_ensemble_with, EnsembleConfig, Execution, Integrator};
use openturb::{InitialState, PhysicalParams};

fn executions() -> Vec<(&'static str, Execution)> {
    vec![
        ("sequential", Execution::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Execution::Parallel { workers: None }),
    ]
}

fn ensemble(c: &mut Criterion) {
    let params = PhysicalParams::natural(1.0, 2.0, 1.0).unwrap();
    let init = InitialState::new(0.1, 0.1).unwrap();
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    for n in [4_096, 32_768] {
        let cfg = EnsembleConfig::new(n, 1e-2, linear_times(1.0, 11), 7, Integrator::ExactOu).unwrap();
        for (name, ex) in executions() {
            group.bench_with_input(BenchmarkId::new(name, n), &cfg, |b, cfg| {
                b.iter(|| simulate_ensemble_with(black_box(cfg), &params, &init, true, ex).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, ensemble);
criterion_main!(benches);
