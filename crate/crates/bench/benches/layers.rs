use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use painnet_bench::{small_dataset, uniform, video};
use painnet_core::embedding::statistical_layer;
use painnet_core::episodic::{sample_episode, ClassPool};
use painnet_core::relation::RelationHead;
use painnet_core::{Comparison, FrameMatrix, Gru, LossKind, ModelConfig, PainNet, StatOp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gru(c: &mut Criterion) {
    let mut cell = Gru::new("gru", 20, 16, &mut ChaCha8Rng::seed_from_u64(0));
    let seg = uniform(16 * 20, 1);
    c.bench_function("gru_forward_segment", |b| {
        b.iter(|| cell.forward(black_box(&seg)).unwrap())
    });
    c.bench_function("gru_forward_backward_segment", |b| {
        b.iter(|| {
            let (h, tr) = cell.forward(black_box(&seg)).unwrap();
            cell.backward_seq(&tr, &h, true)
        })
    });
}

fn stat_layer(c: &mut Criterion) {
    let q = uniform(8 * 16, 2);
    c.bench_function("stat_layer_default_ops_8x16", |b| {
        b.iter(|| statistical_layer(black_box(&q), 8, 16, &StatOp::defaults()))
    });
}

fn relation(c: &mut Criterion) {
    let dim = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let query = uniform(dim, 4);
    let samples: Vec<Vec<f64>> = (0..11).map(|i| uniform(dim, 10 + i)).collect();
    for kind in [Comparison::EucCos, Comparison::SubMultNn] {
        let head = RelationHead::new(kind, dim, &mut rng);
        c.bench_function(&format!("relation_episode_probs_{}", kind.name()), |b| {
            b.iter(|| {
                head.episode_probs(black_box(&query), black_box(&samples))
                    .unwrap()
            })
        });
    }
}

fn model(c: &mut Criterion) {
    let mut model = PainNet::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(5));
    let clip = video(128, 6);
    c.bench_function("embed_video_128_frames", |b| {
        b.iter(|| model.embed(black_box(&clip)).unwrap())
    });

    let ds = small_dataset(2);
    let all: Vec<usize> = (0..ds.len()).collect();
    let pool = ClassPool::new(&ds, &all).unwrap();
    let ep = sample_episode(&pool, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let videos: Vec<_> = std::iter::once(ep.query)
        .chain(ep.samples.videos)
        .map(|i| ds.centered(i).unwrap())
        .collect();
    let refs: Vec<&FrameMatrix> = videos.iter().map(|v| v.as_ref()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    c.bench_function("episode_forward_backward", |b| {
        b.iter(|| {
            model
                .train_group(&refs, &[ep.label], LossKind::Wbce, &mut rng)
                .unwrap()
        })
    });
}

criterion_group!(benches, gru, stat_layer, relation, model);
criterion_main!(benches);
