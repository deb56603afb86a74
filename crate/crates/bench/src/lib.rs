//! Deterministic synthetic inputs for the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use icdq_core::ctxgraph::{ContextualGraph, GraphRecord, GraphRecordNode, NodeOrigin};
use icdq_core::ir::{build_index, IcdCode, IcdIndex, IcdVersion};

const VOCAB: &[&str] = &[
    "pain", "fracture", "sprain", "strain", "laceration", "unspecified", "right", "left", "knee",
    "hip", "shoulder", "ankle", "wrist", "ear", "eye", "hand", "foot", "initial", "encounter",
    "chronic", "acute", "without", "with", "of", "in", "side", "upper", "lower", "limb", "region",
];

/// An index over `doc_count` synthetic code descriptions.
pub fn synthetic_index(doc_count: usize, seed: u64) -> IcdIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<IcdCode> = (0..doc_count)
        .map(|i| {
            let len = rng.random_range(3..=8);
            let description = (0..len)
                .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
                .collect::<Vec<_>>()
                .join(" ");
            IcdCode { code: format!("B{i:05}"), description, version: IcdVersion::Icd10 }
        })
        .collect();
    build_index(&codes).expect("synthetic codes are valid")
}

/// A connected random graph with `n` nodes and word payloads.
pub fn synthetic_graph(n: usize, seed: u64) -> ContextualGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = (0..n)
        .map(|id| GraphRecordNode {
            id,
            words: vec![VOCAB[rng.random_range(0..VOCAB.len())].to_string()],
            origin: if id == 0 { NodeOrigin::QueryEntity } else { NodeOrigin::ContextEntity },
        })
        .collect();
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    for _ in 0..n {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((a.min(b), a.max(b)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    GraphRecord { query_id: "bench".into(), nodes, edges, labels: None }.into_graph()
}

/// Dense feature matrix matching a graph of `n` nodes.
pub fn synthetic_features(n: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0))
}
