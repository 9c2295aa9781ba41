use std::hint::black_box;

use cbcl_bench::{class_vectors, queries};
use cbcl_core::harness::synthetic_store;
use cbcl_core::rehearsal::{GaussianSampler, DEFAULT_RIDGE};
use cbcl_core::{cluster_class, predict_voting, CovarianceMode, LinearClassifier, VotingConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const DIM: usize = 512;
const CLASSES: usize = 100;

fn prediction(c: &mut Criterion) {
    let qs = queries(64, CLASSES, DIM, 7);
    let linear = LinearClassifier::new(DIM, CLASSES, true, 0).unwrap();
    let voting = VotingConfig::default();

    let mut group = c.benchmark_group("predict");
    group.throughput(Throughput::Elements(qs.len() as u64));
    for centroids in [100usize, 500, 1000, 2000, 5000] {
        let store = synthetic_store(centroids, CLASSES, DIM, 0).unwrap();
        group.bench_with_input(BenchmarkId::new("voting", centroids), &store, |b, s| {
            b.iter(|| {
                for q in &qs {
                    black_box(predict_voting(s, black_box(&q.vector), &voting).unwrap());
                }
            })
        });
        group.bench_with_input(BenchmarkId::new("linear", centroids), &linear, |b, l| {
            b.iter(|| {
                for q in &qs {
                    black_box(l.logits(black_box(&q.vector)).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let vectors = class_vectors(500, DIM, 1);
    let mut group = c.benchmark_group("agg_var");
    group.throughput(Throughput::Elements(vectors.len() as u64));
    for threshold in [40.0, 80.0, 120.0] {
        group.bench_with_input(
            BenchmarkId::from_parameter(threshold),
            &threshold,
            |b, &d| b.iter(|| cluster_class(black_box(&vectors), d, CovarianceMode::Full).unwrap()),
        );
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let vectors = class_vectors(200, 64, 2);
    let mut group = c.benchmark_group("pseudo_exemplars");
    for mode in [CovarianceMode::Full, CovarianceMode::Diagonal] {
        let out = cluster_class(&vectors, f64::INFINITY, mode).unwrap();
        let sampler = GaussianSampler::new(&out.clusters[0], DEFAULT_RIDGE).unwrap();
        let mut rng = cbcl_core::seed::rng(3);
        group.bench_function(format!("{mode:?}").to_lowercase(), |b| {
            b.iter(|| black_box(sampler.sample(&mut rng, 100)))
        });
    }
    group.finish();
}

criterion_group!(benches, prediction, clustering, sampling);
criterion_main!(benches);
