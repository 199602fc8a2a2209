//! Throughput of the replicated kernels on one worker versus the full
//! pool. Built with `--no-default-features` the crate is sequential
//! and only the serial variants run.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cimeta::estimators::{EstimatorConfig, Method};
use cimeta::simulation::{DeltaLaw, MethodSpec, Scenario};
use cimeta::{
    gen_dataset, joint_bootstrap, run_scenario, simple_bootstrap_predict, wild_bootstrap_predict,
    IpdDataset, MultiplierLaw,
};

fn grid_dataset() -> IpdDataset {
    let scenario = Scenario::new(5, DeltaLaw::StdNormal, 1, 10, 77);
    gen_dataset(&scenario, 0).unwrap().0
}

fn worker_counts() -> Vec<usize> {
    #[cfg(feature = "parallel")]
    {
        vec![1, cimeta::exec::default_workers().max(2)]
    }
    #[cfg(not(feature = "parallel"))]
    {
        vec![1]
    }
}

fn bench_simple_bootstrap(c: &mut Criterion) {
    let data = grid_dataset();
    let cfg = EstimatorConfig::default();
    let mut group = c.benchmark_group("simple_bootstrap_b200");
    for workers in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| {
                cimeta::exec::with_workers(w, || {
                    simple_bootstrap_predict(&data, "a", Method::Om, 200, 3, &cfg).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_wild_bootstrap(c: &mut Criterion) {
    let data = grid_dataset();
    let mut group = c.benchmark_group("wild_bootstrap_b200");
    for workers in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| {
                cimeta::exec::with_workers(w, || {
                    wild_bootstrap_predict(&data, "a", 200, 3, MultiplierLaw::Normal).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_cov_bootstrap(c: &mut Criterion) {
    let data = grid_dataset();
    let cfg = EstimatorConfig::default();
    let mut group = c.benchmark_group("cov_bootstrap_b200");
    for workers in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| {
                cimeta::exec::with_workers(w, || {
                    joint_bootstrap(&data, "a", Method::Om, &cfg, 200, 5).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_scenario(c: &mut Criterion) {
    let scenario = Scenario::new(5, DeltaLaw::StdNormal, 20, 50, 11);
    let methods = [MethodSpec::Mom];
    let mut group = c.benchmark_group("scenario_mom_reps20_b50");
    group.sample_size(10);
    for workers in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| cimeta::exec::with_workers(w, || run_scenario(&scenario, &methods).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_simple_bootstrap,
    bench_wild_bootstrap,
    bench_cov_bootstrap,
    bench_scenario
);
criterion_main!(benches);
