use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ibl_bench::{moons_split, scored_labels, CLAMP_MODEL};
use ibl_core::baselines::{fit_logistic, knn_scores};
use ibl_core::{auc, parse_expression_model};

fn bench_auc(c: &mut Criterion) {
    let mut group = c.benchmark_group("auc");
    for n in [100, 1_000, 10_000] {
        let (scores, labels) = scored_labels(n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| auc(black_box(&scores), black_box(&labels)).unwrap())
        });
    }
    group.finish();
}

fn bench_expression(c: &mut Criterion) {
    let (_, test) = moons_split(2_000, 50, 3);
    let names = test.feature_names().to_vec();
    c.bench_function("expression/parse", |b| {
        b.iter(|| parse_expression_model(black_box(CLAMP_MODEL), &names).unwrap())
    });
    let program = parse_expression_model(CLAMP_MODEL, &names).unwrap();
    c.bench_function("expression/eval_1950_rows", |b| {
        b.iter(|| test.rows().map(|r| program.eval(black_box(r))).sum::<f64>())
    });
}

fn bench_baselines(c: &mut Criterion) {
    let mut group = c.benchmark_group("baselines");
    for n_train in [10, 50] {
        let (train, test) = moons_split(1_000, n_train, 4);
        group.bench_with_input(BenchmarkId::new("knn", n_train), &n_train, |b, _| {
            b.iter(|| knn_scores(&train, 5, black_box(&test)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("logistic_fit", n_train), &n_train, |b, _| {
            b.iter(|| fit_logistic(black_box(&train), 1.0, 500, 1e-8).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_auc, bench_expression, bench_baselines);
criterion_main!(benches);
