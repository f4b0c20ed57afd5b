use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use modir_core::dataset::{synthesize_grid, BuildConfig, DatasetBundle};
use modir_core::eval::{sweep, SWEEP_COMMANDS};
use modir_core::inference::EngineConfig;
use modir_core::par::Parallelism;
use modir_core::sim::ScenarioConfig;
use modir_core::train::{train, Preset};

const MODES: [Parallelism; 2] = [Parallelism::Sequential, Parallelism::Rayon];

fn bundle() -> DatasetBundle {
    let scenario = ScenarioConfig::wiping(3);
    let demos = synthesize_grid(&scenario, 1).unwrap();
    let build = BuildConfig {
        hop: 25,
        ..BuildConfig::default()
    };
    DatasetBundle::build(&scenario, &demos, &build).unwrap()
}

fn sharded_epoch(c: &mut Criterion) {
    let bundle = bundle();
    let mut preset = Preset::smoke();
    preset.train.epochs = 1;
    preset.train.shards = 4;
    let model_config = preset.model_config(&bundle);
    let mut group = c.benchmark_group("train_epoch_4_shards");
    group.sample_size(10);
    for mode in MODES {
        let mut cfg = preset.train.clone();
        cfg.parallelism = mode;
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &cfg, |b, cfg| {
            b.iter(|| train(&bundle, &model_config, cfg, None).unwrap())
        });
    }
    group.finish();
}

fn latent_sweep(c: &mut Criterion) {
    let bundle = bundle();
    let mut preset = Preset::smoke();
    preset.train.epochs = 1;
    let model = Arc::new(train(&bundle, &preset.model_config(&bundle), &preset.train, None).unwrap().checkpoint);
    let engine = EngineConfig {
        duration_ticks: 2000,
        ..EngineConfig::default()
    };
    let mut group = c.benchmark_group("latent_sweep_5_runs");
    group.sample_size(10);
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| sweep(&model, &engine, 1, &SWEEP_COMMANDS, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sharded_epoch, latent_sweep);
criterion_main!(benches);
