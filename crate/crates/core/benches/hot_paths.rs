//! Data-parallel inner loops, sequential vs rayon.
//!
//! The rayon variants here mirror what the crate's `parallel` feature does
//! internally, so one bench run shows both sides regardless of how the
//! library itself was compiled. Per-item work is identical; only the driving
//! iterator changes.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::prelude::*;

use prnmt::corpus::SentencePair;
use prnmt::model::{
    beam_search, forward_logprob, grad_logprob, init_params, sample_translations, ModelConfig,
    ModelParams, ParamSet,
};
use prnmt::rng::stream_rng;

fn bench_model() -> ModelParams {
    init_params(&ModelConfig::new(120, 120, 32, 64), 7).unwrap()
}

fn bench_corpus(n: usize) -> Vec<SentencePair> {
    let mut rng = stream_rng(11, "bench-corpus", 0);
    (0..n)
        .map(|_| {
            let len = 4 + rng.next_below(6) as usize;
            let source: Vec<u32> = (0..len).map(|_| 4 + rng.next_below(116) as u32).collect();
            let target: Vec<u32> = (0..len).map(|_| 4 + rng.next_below(116) as u32).collect();
            SentencePair { source, target }
        })
        .collect()
}

fn batch_gradient(c: &mut Criterion) {
    let params = bench_model();
    let batch = bench_corpus(32);
    let mut group = c.benchmark_group("batch_gradient");
    group.sample_size(10);

    group.bench_function(BenchmarkId::new("sequential", 32), |b| {
        b.iter(|| {
            let mut acc = ParamSet::zeros(&params.config);
            for pair in &batch {
                let (_, g) = grad_logprob(&params, &pair.source, &pair.target).unwrap();
                acc.axpy(1.0, &g.weights);
            }
            acc
        })
    });

    group.bench_function(BenchmarkId::new("rayon", 32), |b| {
        b.iter(|| {
            let grads: Vec<_> = batch
                .par_iter()
                .map(|pair| grad_logprob(&params, &pair.source, &pair.target).unwrap().1)
                .collect();
            let mut acc = ParamSet::zeros(&params.config);
            for g in &grads {
                acc.axpy(1.0, &g.weights);
            }
            acc
        })
    });
    group.finish();
}

fn corpus_scoring(c: &mut Criterion) {
    let params = bench_model();
    let corpus = bench_corpus(64);
    let mut group = c.benchmark_group("corpus_score");
    group.sample_size(10);

    group.bench_function(BenchmarkId::new("sequential", 64), |b| {
        b.iter(|| {
            corpus
                .iter()
                .map(|p| forward_logprob(&params, &p.source, &p.target).unwrap().0)
                .sum::<f64>()
        })
    });

    group.bench_function(BenchmarkId::new("rayon", 64), |b| {
        b.iter(|| {
            corpus
                .par_iter()
                .map(|p| forward_logprob(&params, &p.source, &p.target).unwrap().0)
                .sum::<f64>()
        })
    });
    group.finish();
}

fn batch_decode(c: &mut Criterion) {
    let params = bench_model();
    let corpus = bench_corpus(16);
    let mut group = c.benchmark_group("beam_decode");
    group.sample_size(10);

    group.bench_function(BenchmarkId::new("sequential", 16), |b| {
        b.iter(|| {
            corpus
                .iter()
                .map(|p| beam_search(&params, &p.source, 4, 12).unwrap()[0].log_prob)
                .sum::<f64>()
        })
    });

    group.bench_function(BenchmarkId::new("rayon", 16), |b| {
        b.iter(|| {
            corpus
                .par_iter()
                .map(|p| beam_search(&params, &p.source, 4, 12).unwrap()[0].log_prob)
                .sum::<f64>()
        })
    });
    group.finish();
}

fn candidate_sampling(c: &mut Criterion) {
    let params = bench_model();
    let corpus = bench_corpus(1);
    let x = &corpus[0].source;
    // exercises the crate's own feature-switched parallel path
    c.bench_function("sample_translations/k64", |b| {
        b.iter(|| sample_translations(&params, x, 64, 12, 3).unwrap())
    });
}

criterion_group!(
    benches,
    batch_gradient,
    corpus_scoring,
    batch_decode,
    candidate_sampling
);
criterion_main!(benches);
