use std::hint::black_box;

use compactrag_core::eval::{exact_match, f1_score, normalize_answer, token_curves};
use criterion::{criterion_group, criterion_main, Criterion};

fn metrics(c: &mut Criterion) {
    let pred = "The Marmorhaus, a cinema in Berlin's Kurfürstendamm, opened in 1913.";
    let gold = "the Marmorhaus in Berlin";
    c.bench_function("normalize_answer", |b| b.iter(|| normalize_answer(black_box(pred))));
    c.bench_function("exact_match", |b| b.iter(|| exact_match(black_box(pred), black_box(gold))));
    c.bench_function("f1_score", |b| b.iter(|| f1_score(black_box(pred), black_box(gold))));
    let per_query: Vec<u64> = (0..10_000).map(|i| 1_500 + i % 700).collect();
    c.bench_function("token_curves_10k", |b| b.iter(|| token_curves(black_box(&per_query), 50_000).len()));
}

criterion_group!(benches, metrics);
criterion_main!(benches);
