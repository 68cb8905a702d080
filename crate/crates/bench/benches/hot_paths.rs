use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use uqroute_bench::fixture;
use uqroute_core::calibration::{build_histogram, DEFAULT_BINS, DEFAULT_RATE, DEFAULT_SEED};
use uqroute_core::probe::DEFAULT_HIDDEN;
use uqroute_core::synth::SYNTH_HIDDEN_DIM;
use uqroute_core::{
    roc_auc_scores, routing_curve, sample_calibration, score_batch, ProbeModel, UqMethod,
};

fn scoring(c: &mut Criterion) {
    let f = fixture(10_000, 1);
    let mut g = c.benchmark_group("score_batch");
    for method in [UqMethod::Perplexity, UqMethod::PTrue, UqMethod::JaccardDegree, UqMethod::Verbalization1s] {
        g.bench_function(BenchmarkId::from_parameter(method), |b| {
            b.iter(|| score_batch(black_box(&f.traces), method, None).unwrap())
        });
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("metrics");
    for n in [1_000, 100_000] {
        let f = fixture(n, 2);
        g.bench_function(BenchmarkId::new("roc_auc", n), |b| {
            b.iter(|| roc_auc_scores(black_box(&f.scores), &f.slm).unwrap())
        });
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        g.bench_function(BenchmarkId::new("routing_curve_21", n), |b| {
            b.iter(|| routing_curve(black_box(&f.scores), &f.slm, &f.llm, &grid).unwrap())
        });
    }
    g.finish();
}

fn probe(c: &mut Criterion) {
    let mut dims = vec![SYNTH_HIDDEN_DIM];
    dims.extend(DEFAULT_HIDDEN);
    dims.push(1);
    let model = ProbeModel::random(&dims, 3).unwrap();
    let f = fixture(1_000, 3);
    c.bench_function("probe_score_1000", |b| {
        b.iter(|| score_batch(black_box(&f.traces), UqMethod::TrainedProbe, Some(&model)).unwrap())
    });
}

fn calibration(c: &mut Criterion) {
    let f = fixture(100_000, 4);
    let hist = build_histogram(&f.scores, DEFAULT_BINS).unwrap();
    c.bench_function("sample_calibration_100k", |b| {
        b.iter(|| sample_calibration(black_box(&hist), DEFAULT_RATE, DEFAULT_SEED).unwrap())
    });
}

criterion_group!(benches, scoring, metrics, probe, calibration);
criterion_main!(benches);
