use std::hint::black_box;

use aqisense_core::data::base_scene;
use aqisense_core::fed::{aggregate, ClientUpdate};
use aqisense_core::ground::{synthesize_diffusion, DiffusionSpec, GcLstm, GcLstmConfig};
use aqisense_core::haze::{build_feature_stack, FeatureConfig};
use aqisense_core::mobilenet::{DenseMobileNet, DenseMobileNetConfig};
use aqisense_core::nn::{Graph, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn depthwise_conv(c: &mut Criterion) {
    let rng = &mut ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::uniform(&[16, 32, 32], 1.0, rng);
    let k = Tensor::uniform(&[16, 3, 3], 1.0, rng);
    c.bench_function("depthwise_conv 16x32x32 k3", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let (xv, kv) = (g.input(x.clone()), g.input(k.clone()));
            let y = g.depthwise_conv(xv, kv, 1, 1).unwrap();
            black_box(g.value(y).data()[0])
        })
    });
}

fn feature_stack(c: &mut Criterion) {
    let img = base_scene(128, 3);
    let cfg = FeatureConfig::default();
    c.bench_function("feature_stack 128x128", |b| {
        b.iter(|| black_box(build_feature_stack(&img, &cfg).unwrap()))
    });
}

fn fedavg_aggregate(c: &mut Criterion) {
    let model = DenseMobileNet::new(DenseMobileNetConfig::desk_scale()).unwrap();
    let updates: Vec<ClientUpdate> = (0..8)
        .map(|i| ClientUpdate {
            client_id: format!("uav-{i}"),
            round: 1,
            sample_count: 50 + i,
            loss: 0.0,
            params: model.init_params(i),
        })
        .collect();
    c.bench_function("aggregate 8 clients", |b| {
        b.iter(|| black_box(aggregate(&updates).unwrap()))
    });
}

fn dense_mobilenet_forward(c: &mut Criterion) {
    let model = DenseMobileNet::new(DenseMobileNetConfig::desk_scale()).unwrap();
    let params = model.init_params(0);
    let rng = &mut ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<Tensor> = (0..16)
        .map(|_| Tensor::uniform(&[6, 32, 32], 1.0, rng))
        .collect();
    let refs: Vec<&Tensor> = xs.iter().collect();
    c.bench_function("dense_mobilenet logits batch 16", |b| {
        b.iter(|| black_box(model.logits(&params, &refs).unwrap()))
    });
}

fn gclstm_forward(c: &mut Criterion) {
    let (graph, _) = synthesize_diffusion(&DiffusionSpec {
        steps: 10,
        ..Default::default()
    })
    .unwrap();
    let cfg = GcLstmConfig::default();
    let model = GcLstm::new(cfg.clone(), graph.len(), 4).unwrap();
    let params = model.init_params(0);
    let rng = &mut ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::uniform(&[cfg.window, graph.len(), 4], 1.0, rng);
    c.bench_function("gclstm forward_window N=10 T=8", |b| {
        b.iter(|| {
            black_box(
                model
                    .forward_window(&params, &graph.propagation, &x)
                    .unwrap(),
            )
        })
    });
}

criterion_group!(
    benches,
    depthwise_conv,
    feature_stack,
    fedavg_aggregate,
    dense_mobilenet_forward,
    gclstm_forward
);
criterion_main!(benches);
