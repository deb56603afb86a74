use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use icdq_bench::{synthetic_features, synthetic_graph, synthetic_index};
use icdq_core::ctxgraph::{augment_with_external, GraphRecord};
use icdq_core::ir::search;
use icdq_core::model::{adjacency_matrix, gnn_forward, ModelParams, TrainConfig};
use icdq_core::supervision::label_graph;

fn bench_bm25_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("bm25_search");
    for doc_count in [1_000usize, 10_000, 70_000] {
        let index = synthetic_index(doc_count, 1);
        group.bench_with_input(BenchmarkId::from_parameter(doc_count), &index, |b, index| {
            b.iter(|| search(index, black_box("acute pain in right knee unspecified"), 15));
        });
    }
    group.finish();
}

fn bench_gnn_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("gnn_forward");
    let cfg = TrainConfig {
        embedding_dim: 50,
        hidden_dim: 64,
        gnn_layers: 3,
        seed: 2,
        ..TrainConfig::default()
    };
    let params = ModelParams::init(&cfg).unwrap();
    for n in [8usize, 32, 128] {
        let graph = synthetic_graph(n, 3);
        let x0 = synthetic_features(n, 50, 4);
        let adjacency = adjacency_matrix(&graph);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| gnn_forward(black_box(&x0), black_box(&adjacency), &params).unwrap());
        });
    }
    group.finish();
}

fn bench_graph_ops(c: &mut Criterion) {
    let graph = synthetic_graph(24, 5);
    let keywords: Vec<String> =
        ["unspecified", "without", "encounter", "initial"].iter().map(|s| s.to_string()).collect();
    c.bench_function("augment_with_external", |b| {
        b.iter(|| augment_with_external(black_box(&graph), &keywords));
    });
    c.bench_function("label_graph", |b| {
        b.iter(|| label_graph(black_box(&graph), "pain in right knee initial encounter", 0.15));
    });
    c.bench_function("graph_record_round_trip", |b| {
        b.iter(|| GraphRecord::from(black_box(&graph)).into_graph());
    });
}

criterion_group!(benches, bench_bm25_search, bench_gnn_forward, bench_graph_ops);
criterion_main!(benches);
