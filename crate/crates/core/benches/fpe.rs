use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use openturb::fpe::{evolve_fpe_with, gaussian_wigner, stable_dt, FpeOptions, GridGeometry};
use openturb::{Execution, InitialState, PhysicalParams};

fn executions() -> Vec<(&'static str, Execution)> {
    vec![
        ("sequential", Execution::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Execution::Parallel { workers: None }),
    ]
}

fn fpe(c: &mut Criterion) {
    let params = PhysicalParams::natural(1.0, 2.0, 1.0).unwrap();
    let init = InitialState::new(0.25, 0.25).unwrap();
    let mut group = c.benchmark_group("fpe_10_steps");
    group.sample_size(10);
    for n in [128, 256] {
        let geom = GridGeometry::symmetric(8.0, 7.0, n, n).unwrap();
        let grid = gaussian_wigner(&init, &geom).unwrap();
        let dt = stable_dt(&grid, &params, true, 0.9);
        for (name, execution) in executions() {
            let options = FpeOptions { execution, ..FpeOptions::default() };
            group.bench_with_input(BenchmarkId::new(name, n), &grid, |b, grid| {
                b.iter(|| evolve_fpe_with(black_box(grid), &params, dt, 10, true, options, |_, _| {}).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, fpe);
criterion_main!(benches);
