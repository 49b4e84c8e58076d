//! Sequential against parallel execution at each parallel site: clients in a
//! federation round, chunks of a batched prediction, points of a sweep.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use meterguard_core::attacks::AttackFamily;
use meterguard_core::autodiff::Tensor;
use meterguard_core::experiment::{
    run_sweep, DataSource, ExperimentConfig, FederationParams, Protocol, Study, SweepConfig,
};
use meterguard_core::models::{Architecture, Model, ModelKind};
use meterguard_core::par::ExecMode;
use rand::{Rng, SeedableRng};

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn small_config(exec: ExecMode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        name: "bench".into(),
        exec,
        data: DataSource::Synthetic {
            households: 8,
            days: 20,
            seed: None,
        },
        federation: Some(FederationParams {
            rounds: 1,
            ..Default::default()
        }),
        ..Default::default()
    };
    cfg.pipeline.anomaly.anomaly_fraction = 0.5;
    cfg.lstm.hidden = 32;
    cfg
}

fn federation_round(c: &mut Criterion) {
    let mut group = c.benchmark_group("federation_round");
    group.sample_size(10);
    for mode in MODES {
        let study = Study::prepare(small_config(mode)).unwrap();
        group.bench_function(BenchmarkId::from_parameter(format!("{mode:?}")), |b| {
            b.iter(|| black_box(study.train_clean().unwrap()))
        });
    }
    group.finish();
}

fn predict(c: &mut Criterion) {
    let model = Model::new(Architecture::default_for(ModelKind::Lstm), 0).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let rows = 2048;
    let x = Tensor::new(vec![rows, 24], (0..rows * 24).map(|_| rng.random::<f64>()).collect()).unwrap();
    let mut group = c.benchmark_group("predict_proba");
    group.sample_size(10);
    for mode in MODES {
        group.bench_function(BenchmarkId::from_parameter(format!("{mode:?}")), |b| {
            b.iter(|| black_box(model.predict_proba_with(mode, &x).unwrap()))
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("inference_sweep");
    group.sample_size(10);
    for mode in MODES {
        let mut cfg = small_config(mode);
        cfg.protocol = Protocol::InferenceAttack;
        cfg.attack.pgd_iters = 3;
        cfg.sweep = Some(SweepConfig {
            epsilons: vec![0.1, 0.2, 0.4, 0.8],
            families: vec![AttackFamily::Fgsm, AttackFamily::Pgd],
            ..Default::default()
        });
        let study = Study::prepare(cfg).unwrap();
        let clean = study.train_clean().unwrap();
        group.bench_function(BenchmarkId::from_parameter(format!("{mode:?}")), |b| {
            b.iter(|| black_box(run_sweep(&study, &clean).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, federation_round, predict, sweep);
criterion_main!(benches);
