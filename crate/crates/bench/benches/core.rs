use std::hint::black_box;

use cirs_core::env::{ItemCatalog, ItemId};
use cirs_core::harness::{build_world, ExperimentConfig};
use cirs_core::policy::{PolicyBundle, PolicyConfig, PpoConfig};
use cirs_core::statetracker::{TrackerConfig, TrackerInputs};
use cirs_core::usermodel::{
    counterfactual_exposure, train_user_model, ExposureConfig, ExposureParams, TrainData,
};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn exposure(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tags = (0..100).map(|_| vec![rng.random_range(0..10u32)]).collect();
    let catalog = ItemCatalog::categorical(10, tags).unwrap();
    let params = ExposureParams::unit(1, 100, ExposureConfig::default());
    let plan: Vec<(ItemId, usize)> = (0..30).map(|s| (rng.random_range(0..100), s)).collect();
    c.bench_function("counterfactual_exposure/30", |b| {
        b.iter(|| counterfactual_exposure(black_box(&plan), 0, 7, 30, &params, &catalog).unwrap())
    });
}

fn policy(horizon: usize) -> PolicyBundle {
    let cfg = PolicyConfig {
        tracker: TrackerConfig {
            max_len: horizon,
            ..TrackerConfig::default()
        },
        ppo: PpoConfig {
            horizon,
            ..PpoConfig::default()
        },
        ..PolicyConfig::default()
    };
    let inputs = TrackerInputs::Embedded {
        n_users: 20,
        n_items: 100,
    };
    PolicyBundle::new(cfg, inputs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
}

fn tracker_step(c: &mut Criterion) {
    let bundle = policy(30);
    c.bench_function("tracker_session/30_steps", |b| {
        b.iter(|| {
            let mut s = bundle.tracker().session(bundle.store(), 3).unwrap();
            for k in 0..30 {
                s.push(k % 100, 0.5).unwrap();
            }
            black_box(s.state()[0])
        })
    });
}

fn planning_epoch(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let world = build_world(&cfg).unwrap();
    let data = TrainData {
        records: &world.records,
        catalog: world.env.catalog(),
        n_users: world.env.n_users(),
        n_items: world.env.n_items(),
        rating_scale: world.rating_scale,
    };
    let model = train_user_model(&data, &cfg.user_model, cfg.exposure).unwrap();
    let mut bundle = policy(cfg.env.max_round);
    let mut epoch = 0;
    let mut group = c.benchmark_group("planning");
    group.sample_size(10);
    group.bench_function("plan_epoch", |b| {
        b.iter(|| {
            epoch += 1;
            bundle.plan_epoch(&model, 0, epoch).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, exposure, tracker_step, planning_epoch);
criterion_main!(benches);
