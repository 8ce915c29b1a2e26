use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use signet_core::datasets::{gen_synthetic, SyntheticVariant};
use signet_core::evaluation::roc_auc;
use signet_core::graph::{batch_graphs, dht_transform};
use signet_core::model::{ModelConfig, Signet};
use signet_core::objective::LossConfig;
use signet_core::training::{batch_gradients, train_epoch, ModelState, TrainConfig};

fn bm_mt_model() -> (Vec<signet_core::Graph>, Signet) {
    let data = gen_synthetic(SyntheticVariant::MotifType, 64, 64, 0.1, 0).unwrap();
    let d = data.feature_dim();
    let model = Signet::new(ModelConfig::default(), d, d, 0).unwrap();
    (data.train, model)
}

fn forward(c: &mut Criterion) {
    let (graphs, model) = bm_mt_model();
    let refs: Vec<_> = graphs.iter().collect();
    c.bench_function("forward_batch_64", |b| {
        b.iter(|| model.forward_graphs(black_box(&refs)).unwrap())
    });
    let batch = batch_graphs(&graphs).unwrap();
    let loss = LossConfig::default();
    c.bench_function("loss_and_gradients_64", |b| {
        b.iter(|| batch_gradients(&model, black_box(&batch), &loss).unwrap())
    });
}

fn epoch(c: &mut Criterion) {
    let (graphs, model) = bm_mt_model();
    let cfg = TrainConfig::default();
    let state = ModelState::new(model, 0);
    c.bench_function("train_epoch_64", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| train_epoch(&mut s, &graphs, &cfg).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn dual(c: &mut Criterion) {
    let data = gen_synthetic(SyntheticVariant::MotifNumber, 200, 1, 0.5, 1).unwrap();
    c.bench_function("dht_transform_200", |b| {
        b.iter(|| {
            for g in &data.train {
                black_box(dht_transform(g).unwrap());
            }
        })
    });
}

fn auc(c: &mut Criterion) {
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64 / n as f64).collect();
    let labels: Vec<bool> = (0..n).map(|i| i % 10 == 0).collect();
    c.bench_function("roc_auc_10k", |b| {
        b.iter(|| roc_auc(black_box(&scores), &labels).unwrap())
    });
}

criterion_group!(benches, forward, epoch, dual, auc);
criterion_main!(benches);
