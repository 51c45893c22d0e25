use anyshot_core::anyshot::{synthesize_features, train_softmax, SoftmaxConfig};
use anyshot_core::data::make_synthetic;
use anyshot_core::losses::{wgan_critic_loss, LossWeights};
use anyshot_core::rng::{normal_matrix, substream};
use anyshot_core::{FeatureModels, Graph, LatentSpec, SyntheticSpec, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn uniform(rows: usize, cols: usize, seed: u64) -> Tensor {
    let n = normal_matrix(&mut substream(seed, "bench"), rows, cols);
    n.map(|v| 1.0 / (1.0 + (-v).exp()))
}

fn matmul(c: &mut Criterion) {
    let a = uniform(256, 256, 1);
    let b = uniform(256, 256, 2);
    c.bench_function("matmul_256", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let x = g.constant(a.clone());
            let y = g.constant(b.clone());
            black_box(g.matmul(x, y).unwrap());
        })
    });
}

fn critic_step(c: &mut Criterion) {
    let models = FeatureModels::new(LatentSpec::new(32, 16).with_hidden(128), 0).unwrap();
    let (x, xf, cond) = (uniform(64, 32, 1), uniform(64, 32, 2), uniform(64, 16, 3));
    let alpha = uniform(64, 1, 4);
    let w = LossWeights::default();
    c.bench_function("critic_loss_with_penalty_and_backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let t = wgan_critic_loss(&mut g, &models.d1, &x, &xf, &cond, &alpha, &w).unwrap();
            black_box(g.backward(t.loss).unwrap());
        })
    });
}

fn softmax(c: &mut Criterion) {
    let s = make_synthetic(&SyntheticSpec::default()).unwrap();
    let models = FeatureModels::new(LatentSpec::new(32, 16).with_hidden(128), 0).unwrap();
    let d = &s.dataset;
    let set = synthesize_features(&models.generator, d.class_embeddings(), d.novel_classes(), 300, 0)
        .unwrap();
    let cfg = SoftmaxConfig {
        epochs: 50,
        ..SoftmaxConfig::default()
    };
    c.bench_function("softmax_50_epochs_5x300", |bench| {
        bench.iter(|| black_box(train_softmax(&set, d.novel_classes(), &cfg).unwrap()))
    });
}

criterion_group!(benches, matmul, critic_step, softmax);
criterion_main!(benches);
