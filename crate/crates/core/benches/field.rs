//! Single-threaded versus multi-threaded execution of the data-parallel paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lettuce_core::control::{ActuationSchedule, ControlPolicy, PolicyKind, SaturationSpec};
use lettuce_core::field::{self, FieldConfig};
use lettuce_core::metrics;
use lettuce_core::model::PlantParams;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let all = rayon::ThreadPoolBuilder::new().build().expect("pool");
    vec![("sequential", one), ("parallel", all)]
}

fn bench_field(c: &mut Criterion) {
    let cfg = FieldConfig { season_days: 10.0, ..FieldConfig::default() };
    let policy = ControlPolicy {
        kind: PolicyKind::GlobalProportional,
        gain: ControlPolicy::DEFAULT_GAIN,
        saturation: SaturationSpec { u_bar: 0.075, u_range: 0.025 },
        noise_frac: 0.0,
    };
    let schedule = ActuationSchedule::daily();
    let mut group = c.benchmark_group("simulate_field");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &pool, |b, pool| {
            b.iter(|| pool.install(|| field::simulate_field(&cfg, &policy, &schedule).expect("simulate")))
        });
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let cfg = FieldConfig::default();
    let params: Vec<PlantParams> = (0..16)
        .map(|i| field::sample_params(&cfg.nominal_params, 0.05, 0, i).expect("params"))
        .collect();
    let grid = metrics::linspace(0.0, 0.2, 8);
    let mut group = c.benchmark_group("dose_response_sweep");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &pool, |b, pool| {
            b.iter(|| {
                pool.install(|| {
                    metrics::dose_response_sweep(&params, &grid, 10.0, cfg.s0, &cfg.env, cfg.dt)
                        .expect("sweep")
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_field, bench_sweep);
criterion_main!(benches);
