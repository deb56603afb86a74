//! Distant supervision: derive per-node relevance labels from ICD code
//! descriptions instead of human annotation.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::DiagnosisQuery;
use crate::ctxgraph::ContextualGraph;
use crate::ir::IcdIndex;
use crate::text::tokenize;

/// Graphs with labels populated, plus the provenance of those labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledGraphSet {
    pub graphs: Vec<ContextualGraph>,
    pub threshold_used: f64,
    /// query_id -> ICD code whose description supplied the labels.
    pub alignment: BTreeMap<String, String>,
}

/// |a ∩ b| / |a ∪ b|, with 0 for two empty sets.
pub fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    let intersection = a.intersection(b).count();
    intersection as f64 / union as f64
}

fn token_set(text: &str) -> HashSet<String> {
    tokenize(text).into_iter().collect()
}

/// Map each query to the gold code whose description is most token-similar
/// to the query text. Ties break to the lexicographically smallest code;
/// queries with zero similarity to every gold description stay unaligned.
pub fn align_queries_to_codes(
    queries: &[DiagnosisQuery],
    gold_codes: &std::collections::BTreeSet<String>,
    icd_index: &IcdIndex,
) -> BTreeMap<String, String> {
    let mut alignment = BTreeMap::new();
    for query in queries {
        let query_tokens = token_set(&query.text);
        let mut best: Option<(f64, &String)> = None;
        for code in gold_codes {
            let Some(description) = icd_index.description_of(code) else {
                continue;
            };
            let score = jaccard(&query_tokens, &token_set(description));
            if score <= 0.0 {
                continue;
            }
            // Codes iterate in ascending order, so strict improvement
            // keeps the smallest code on ties.
            if best.map(|(s, _)| score > s).unwrap_or(true) {
                best = Some((score, code));
            }
        }
        if let Some((_, code)) = best {
            alignment.insert(query.query_id.clone(), code.clone());
        }
    }
    alignment
}

/// Label every node of a graph against one code description: relevant (1)
/// iff the Jaccard similarity of the node's words and the description
/// tokens strictly exceeds `t`. Nodes and adjacency are untouched.
pub fn label_graph(graph: &ContextualGraph, code_description: &str, t: f64) -> ContextualGraph {
    let description_tokens = token_set(code_description);
    let labels = graph
        .nodes
        .iter()
        .map(|node| {
            let words: HashSet<String> = node.words.iter().cloned().collect();
            u8::from(jaccard(&words, &description_tokens) > t)
        })
        .collect();
    let mut out = graph.clone();
    out.labels = Some(labels);
    out.assert_invariants();
    out
}

/// Align queries to codes and label their graphs in one pass. Unaligned
/// queries and degenerate graphs are dropped.
pub fn build_labeled_set(
    graphs: &[ContextualGraph],
    queries: &[DiagnosisQuery],
    gold_codes_of: &BTreeMap<String, std::collections::BTreeSet<String>>,
    icd_index: &IcdIndex,
    t: f64,
) -> LabeledGraphSet {
    let mut alignment = BTreeMap::new();
    for query in queries {
        if let Some(gold) = gold_codes_of.get(&query.note_id) {
            let partial = align_queries_to_codes(std::slice::from_ref(query), gold, icd_index);
            alignment.extend(partial);
        }
    }
    let labeled = graphs
        .iter()
        .filter(|g| !g.is_degenerate())
        .filter_map(|graph| {
            let code = alignment.get(&graph.query_id)?;
            let description = icd_index.description_of(code)?;
            Some(label_graph(graph, description, t))
        })
        .collect();
    LabeledGraphSet { graphs: labeled, threshold_used: t, alignment }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctxgraph::{augment_with_external, ContextualGraph, GraphRecord, GraphRecordNode, NodeOrigin};
    use crate::ir::{build_index, IcdCode, IcdVersion};
    use proptest::prelude::*;

    fn set(words: &[&str]) -> HashSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn graph_with_nodes(words_per_node: &[&[&str]]) -> ContextualGraph {
        let record = GraphRecord {
            query_id: "q".into(),
            nodes: words_per_node
                .iter()
                .enumerate()
                .map(|(id, words)| GraphRecordNode {
                    id,
                    words: words.iter().map(|w| w.to_string()).collect(),
                    origin: NodeOrigin::ContextEntity,
                })
                .collect(),
            edges: vec![],
            labels: None,
        };
        record.into_graph()
    }

    #[test]
    fn jaccard_basics() {
        let a = set(&["strain", "lumbar", "region"]);
        assert_eq!(jaccard(&a, &a), 1.0);
        let b = set(&["strain", "of", "lumbar", "region", "lower", "back"]);
        assert_eq!(jaccard(&a, &b), 0.5);
        assert_eq!(jaccard(&set(&["x"]), &set(&["y"])), 0.0);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 0.0);
    }

    fn index_with(codes: &[(&str, &str)]) -> IcdIndex {
        let codes = codes
            .iter()
            .map(|(code, description)| IcdCode {
                code: code.to_string(),
                description: description.to_string(),
                version: IcdVersion::Icd10,
            })
            .collect::<Vec<_>>();
        build_index(&codes).unwrap()
    }

    fn query(text: &str) -> DiagnosisQuery {
        DiagnosisQuery {
            query_id: "n1#q0".into(),
            note_id: "n1".into(),
            text: text.into(),
            ordinal: 0,
        }
    }

    #[test]
    fn aligns_to_most_similar_gold_code() {
        // J(query, M25.561) = |{knee,pain}| / |{acute,knee,pain,in,right}| = 2/5
        // J(query, I10) = 0
        let index = index_with(&[
            ("M25.561", "Pain in right knee"),
            ("I10", "Essential hypertension"),
        ]);
        let gold = ["M25.561", "I10"].iter().map(|s| s.to_string()).collect();
        let alignment = align_queries_to_codes(&[query("acute knee pain")], &gold, &index);
        assert_eq!(alignment.get("n1#q0"), Some(&"M25.561".to_string()));
    }

    #[test]
    fn singleton_gold_takes_every_overlapping_query() {
        let index = index_with(&[("I10", "Essential hypertension")]);
        let gold = ["I10"].iter().map(|s| s.to_string()).collect();
        let alignment = align_queries_to_codes(&[query("hypertension follow up")], &gold, &index);
        assert_eq!(alignment.get("n1#q0"), Some(&"I10".to_string()));
    }

    #[test]
    fn zero_overlap_stays_unaligned() {
        let index = index_with(&[("I10", "Essential hypertension")]);
        let gold = ["I10"].iter().map(|s| s.to_string()).collect();
        let alignment = align_queries_to_codes(&[query("fractured wrist")], &gold, &index);
        assert!(alignment.is_empty());
    }

    #[test]
    fn empty_gold_set_gives_empty_map() {
        let index = index_with(&[("I10", "Essential hypertension")]);
        let alignment =
            align_queries_to_codes(&[query("hypertension")], &Default::default(), &index);
        assert!(alignment.is_empty());
    }

    #[test]
    fn alignment_ties_pick_smallest_code() {
        let index = index_with(&[("B20", "knee pain"), ("A10", "pain knee")]);
        let gold = ["B20", "A10"].iter().map(|s| s.to_string()).collect();
        let alignment = align_queries_to_codes(&[query("knee pain")], &gold, &index);
        assert_eq!(alignment.get("n1#q0"), Some(&"A10".to_string()));
    }

    #[test]
    fn label_above_threshold() {
        // J({pain, knee}, {pain, in, right, knee}) = 2/4 = 0.5 > 0.2
        let graph = graph_with_nodes(&[&["pain", "knee"]]);
        let labeled = label_graph(&graph, "pain in right knee", 0.2);
        assert_eq!(labeled.labels, Some(vec![1]));
    }

    #[test]
    fn threshold_one_labels_nothing() {
        let graph = graph_with_nodes(&[&["pain"], &["knee"]]);
        let labeled = label_graph(&graph, "pain knee", 1.0);
        assert_eq!(labeled.labels, Some(vec![0, 0]));
    }

    #[test]
    fn no_overlap_is_zero_at_any_threshold() {
        let graph = graph_with_nodes(&[&["banana"]]);
        for t in [0.0, 0.15, 0.5] {
            let labeled = label_graph(&graph, "pain in right knee", t);
            assert_eq!(labeled.labels, Some(vec![0]));
        }
    }

    #[test]
    fn labeling_does_not_mutate_structure() {
        let graph = graph_with_nodes(&[&["pain"], &["left"]]);
        let labeled = label_graph(&graph, "pain left side", 0.1);
        assert_eq!(labeled.nodes, graph.nodes);
        assert_eq!(labeled.edges(), graph.edges());
    }

    #[test]
    fn external_keyword_nodes_are_labeled_too() {
        let graph = graph_with_nodes(&[&["sciatica"]]);
        let augmented = augment_with_external(&graph, &["unspecified".to_string()]);
        let labeled = label_graph(&augmented, "sciatica unspecified side", 0.15);
        assert_eq!(labeled.labels, Some(vec![1, 1]));
    }

    prop_compose! {
        fn arb_graph()(words in proptest::collection::vec(
            proptest::collection::vec("[a-e]{1,3}", 1..4), 1..6))
            -> ContextualGraph
        {
            graph_with_nodes(
                &words.iter().map(|w| {
                    w.iter().map(|s| s.as_str()).collect::<Vec<_>>()
                }).collect::<Vec<_>>().iter().map(|v| v.as_slice()).collect::<Vec<_>>()
            )
        }
    }

    proptest! {
        #[test]
        fn labels_match_brute_force_and_are_monotone(
            graph in arb_graph(),
            description in "[a-e]{1,3}( [a-e]{1,3}){0,5}",
        ) {
            let thresholds = [0.0, 0.15, 0.5, 1.0];
            let description_tokens: HashSet<String> =
                description.split(' ').map(|s| s.to_string()).collect();
            let mut previous: Option<Vec<u8>> = None;
            for &t in &thresholds {
                let labeled = label_graph(&graph, &description, t);
                let got = labeled.labels.clone().unwrap();
                // Brute force: recompute Jaccard per node from scratch.
                let want: Vec<u8> = graph.nodes.iter().map(|node| {
                    let words: HashSet<String> = node.words.iter().cloned().collect();
                    let inter = words.intersection(&description_tokens).count() as f64;
                    let union = words.union(&description_tokens).count() as f64;
                    let j = if union == 0.0 { 0.0 } else { inter / union };
                    u8::from(j > t)
                }).collect();
                prop_assert_eq!(&got, &want);
                if let Some(prev) = &previous {
                    // Raising t never flips 0 -> 1.
                    for (lo_t, hi_t) in prev.iter().zip(&got) {
                        prop_assert!(hi_t <= lo_t);
                    }
                }
                previous = Some(got);
            }
        }
    }
}
