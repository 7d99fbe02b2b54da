use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use surprise_bench::fixture;
use surprise_core::fewshot::{batch_loss_and_gradient, build_pairs};
use surprise_core::{
    classify, kmeans, pairwise_matrix, surprise_assign, surprise_matrix, AdapterModel, MixConfig, RescaleMap,
    SimilarityKind, StatsEstimator, TrainConfig,
};

const COS: SimilarityKind = SimilarityKind::Cosine;
const GAUSS: StatsEstimator = StatsEstimator::GaussianMoments;

fn scoring(c: &mut Criterion) {
    let mut group = c.benchmark_group("score");
    for per_label in [100, 1000] {
        let data = fixture(8, per_label);
        let n = data.docs.len();
        group.bench_with_input(BenchmarkId::new("pairwise_matrix", n), &data, |b, d| {
            b.iter(|| pairwise_matrix(black_box(&d.docs), &d.queries, COS).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("surprise_matrix", n), &data, |b, d| {
            b.iter(|| surprise_matrix(black_box(&d.docs), &d.queries, &d.docs, COS, GAUSS).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("surprise_matrix_percentile", n), &data, |b, d| {
            b.iter(|| {
                surprise_matrix(black_box(&d.docs), &d.queries, &d.docs, COS, StatsEstimator::RobustPercentile).unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("classify_crossover", n), &data, |b, d| {
            b.iter(|| classify(black_box(&d.docs), &d.queries, &d.docs, &MixConfig::crossover(1000.0), COS, GAUSS).unwrap())
        });
        let psi = pairwise_matrix(&data.docs, &data.queries, COS).unwrap();
        group.bench_with_input(BenchmarkId::new("rescale_fit", n), &psi, |b, p| {
            b.iter(|| RescaleMap::fit(black_box(p.values())).unwrap())
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let data = fixture(4, 5);
    let pairs = build_pairs(&data.docs, &data.gold, &data.queries, 0.05).unwrap();
    let refs: Vec<_> = pairs.iter().take(16).collect();
    let adapter = AdapterModel::identity(data.docs.dimension());
    let cfg = TrainConfig::default();
    c.bench_function("train/batch_gradient_16", |b| {
        b.iter(|| batch_loss_and_gradient(black_box(&adapter), &refs, &cfg).unwrap())
    });
}

fn clustering(c: &mut Criterion) {
    let data = fixture(6, 200);
    c.bench_function("cluster/kmeans_k6_n1200", |b| {
        b.iter(|| kmeans(black_box(&data.docs), 6, 1, 300, 1e-6).unwrap())
    });
    let fit = kmeans(&data.docs, 6, 1, 300, 1e-6).unwrap();
    c.bench_function("cluster/surprise_assign_k6_n1200", |b| {
        b.iter(|| surprise_assign(black_box(&data.docs), &fit.centroids, GAUSS).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = scoring, training, clustering
}
criterion_main!(benches);
