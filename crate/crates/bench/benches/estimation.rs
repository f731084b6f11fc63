use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use wfpc_core::dgp::{assemble_panel, FactorDesign, LoadingMode, Panel};
use wfpc_core::montecarlo::{self, Experiment, McConfig};
use wfpc_core::{pc_fit, pseudo_true_rotation};

fn panel(n: usize) -> Panel {
    let design = FactorDesign::reference(n, n, (1.0, 0.9), LoadingMode::NonSparse, 1);
    assemble_panel(&design, &mut ChaCha20Rng::seed_from_u64(1)).unwrap()
}

fn bench_pc_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("pc_fit");
    for n in [50, 100, 200] {
        let p = panel(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &p.x, |b, x| b.iter(|| pc_fit(black_box(x), 2).unwrap()));
    }
    group.finish();
}

fn bench_rotation(c: &mut Criterion) {
    let p = panel(200);
    c.bench_function("pseudo_true_rotation/200", |b| {
        b.iter(|| pseudo_true_rotation(black_box(&p.f_star), black_box(&p.b_star)).unwrap())
    });
}

fn bench_replication(c: &mut Criterion) {
    let mut group = c.benchmark_group("mc_replication");
    group.sample_size(20);
    for exp in [Experiment::FactorLosses, Experiment::ElementTests, Experiment::Coverage] {
        let cfg = McConfig::single(exp, (1.0, 0.9), 200, 200, 1);
        group.bench_function(exp.name(), |b| b.iter(|| montecarlo::run(black_box(&cfg)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_pc_fit, bench_rotation, bench_replication);
criterion_main!(benches);
