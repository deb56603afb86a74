//! Contextual graph construction: one graph per diagnosis query, built from
//! the query's linked entities, KB-path-matched note entities, and optional
//! external keywords.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::DiagnosisQuery;
use crate::kb::{simple_path_exists, KnowledgeBase};
use crate::nel::LinkedEntity;
use crate::text::tokenize;

/// Where a graph node came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeOrigin {
    #[serde(rename = "query-entity")]
    QueryEntity,
    #[serde(rename = "context-entity")]
    ContextEntity,
    #[serde(rename = "external-keyword")]
    ExternalKeyword,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub node_id: usize,
    /// Lowercase tokens of the node's surface text; never empty.
    pub words: Vec<String>,
    pub origin: NodeOrigin,
    /// Present for entity nodes, absent for external keywords.
    pub source_concept: Option<String>,
    /// (section, sentence index) of the first contributing mention.
    pub source_sentence: Option<(String, usize)>,
}

/// Per-query graph: nodes, a symmetric zero-diagonal adjacency matrix, and
/// optional per-node relevance labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextualGraph {
    pub query_id: String,
    pub nodes: Vec<GraphNode>,
    adjacency: Vec<Vec<u8>>,
    pub labels: Option<Vec<u8>>,
}

impl ContextualGraph {
    pub fn new(query_id: String) -> Self {
        Self { query_id, nodes: Vec::new(), adjacency: Vec::new(), labels: None }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j] == 1
    }

    /// Edge list as (i, j) pairs with i < j.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.node_count();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacency[i][j] == 1 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn adjacency(&self) -> &[Vec<u8>] {
        &self.adjacency
    }

    fn push_node(&mut self, mut node: GraphNode) -> usize {
        let id = self.nodes.len();
        node.node_id = id;
        self.nodes.push(node);
        for row in &mut self.adjacency {
            row.push(0);
        }
        self.adjacency.push(vec![0; id + 1]);
        if let Some(labels) = &mut self.labels {
            labels.push(0);
        }
        id
    }

    fn add_edge(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        self.adjacency[i][j] = 1;
        self.adjacency[j][i] = 1;
    }

    /// Panics when the adjacency matrix is not symmetric with zero diagonal
    /// or a label vector has the wrong length. Cheap; called after every
    /// construction step and from tests.
    pub fn assert_invariants(&self) {
        let n = self.node_count();
        assert_eq!(self.adjacency.len(), n);
        for (i, row) in self.adjacency.iter().enumerate() {
            assert_eq!(row.len(), n);
            assert_eq!(row[i], 0, "diagonal must be zero");
            for (j, &v) in row.iter().enumerate() {
                assert!(v <= 1);
                assert_eq!(v, self.adjacency[j][i], "adjacency must be symmetric");
            }
        }
        if let Some(labels) = &self.labels {
            assert_eq!(labels.len(), n);
            assert!(labels.iter().all(|&l| l <= 1));
        }
        for node in &self.nodes {
            assert!(!node.words.is_empty(), "node words must be non-empty");
            assert_eq!(
                node.origin == NodeOrigin::ExternalKeyword,
                node.source_concept.is_none(),
                "external-keyword nodes and only they lack a source concept"
            );
        }
    }
}

/// Build the contextual graph for one query.
///
/// Node set: one node per distinct query-entity concept, plus one node per
/// distinct note-entity concept reachable from some query entity by a
/// simple path of at most `max_hops` edges ("matched entity").
/// Edge set: (query entity, matched entity) for every matched pair, plus
/// (matched entity, other linked note entity in the same sentence) when the
/// other entity is itself a graph node. A query with no linked entities
/// yields a zero-node graph, to be skipped downstream.
pub fn build_graph(
    query: &DiagnosisQuery,
    query_entities: &[LinkedEntity],
    note_entities: &[LinkedEntity],
    kb: &KnowledgeBase,
    max_hops: usize,
) -> ContextualGraph {
    let mut graph = ContextualGraph::new(query.query_id.clone());
    if query_entities.is_empty() {
        return graph;
    }

    let mut node_of: HashMap<String, usize> = HashMap::new();
    for entity in query_entities {
        if node_of.contains_key(&entity.concept_id) {
            continue;
        }
        let id = graph.push_node(GraphNode {
            node_id: 0,
            words: tokenize(&entity.mention.surface),
            origin: NodeOrigin::QueryEntity,
            source_concept: Some(entity.concept_id.clone()),
            source_sentence: None,
        });
        node_of.insert(entity.concept_id.clone(), id);
    }

    let query_concepts: Vec<String> =
        graph.nodes.iter().filter_map(|n| n.source_concept.clone()).collect();

    // Matched entities: note entities with a bounded simple path to some
    // query entity, deduplicated by concept.
    let mut matched: BTreeSet<String> = BTreeSet::new();
    for entity in note_entities {
        let mut reaches: Vec<usize> = Vec::new();
        for concept in &query_concepts {
            if simple_path_exists(kb, concept, &entity.concept_id, max_hops)
                .ok()
                .flatten()
                .is_some()
            {
                reaches.push(node_of[concept]);
            }
        }
        if reaches.is_empty() {
            continue;
        }
        matched.insert(entity.concept_id.clone());
        let node = *node_of.entry(entity.concept_id.clone()).or_insert_with(|| {
            graph.push_node(GraphNode {
                node_id: 0,
                words: tokenize(&entity.mention.surface),
                origin: NodeOrigin::ContextEntity,
                source_concept: Some(entity.concept_id.clone()),
                source_sentence: Some((
                    entity.mention.sentence.section.clone(),
                    entity.mention.sentence.index,
                )),
            })
        });
        for query_node in reaches {
            graph.add_edge(query_node, node);
        }
    }

    // Co-sentence edges: every mention of a matched concept connects it to
    // the other linked entities of that sentence that are graph nodes.
    let mut by_sentence: BTreeMap<(String, usize), Vec<&LinkedEntity>> = BTreeMap::new();
    for entity in note_entities {
        let key = (entity.mention.sentence.section.clone(), entity.mention.sentence.index);
        by_sentence.entry(key).or_default().push(entity);
    }
    for entities in by_sentence.values() {
        for entity in entities {
            if !matched.contains(&entity.concept_id) {
                continue;
            }
            let from = node_of[&entity.concept_id];
            for other in entities {
                if other.concept_id == entity.concept_id {
                    continue;
                }
                if let Some(&to) = node_of.get(&other.concept_id) {
                    graph.add_edge(from, to);
                }
            }
        }
    }

    graph.assert_invariants();
    graph
}

/// Tokens frequent in ICD descriptions but absent from the corpus
/// vocabulary, ranked by description occurrence count (ties lexicographic),
/// truncated to `top_k`.
pub fn compute_external_keywords(
    icd_descriptions: &[String],
    corpus_vocabulary: &HashSet<String>,
    top_k: usize,
) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for description in icd_descriptions {
        for token in tokenize(description) {
            if !corpus_vocabulary.contains(&token) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(top_k).map(|(t, _)| t).collect()
}

/// Add one external-keyword node per keyword, each linked to every
/// query-entity node. Idempotent: keywords already present add nothing.
pub fn augment_with_external(graph: &ContextualGraph, keywords: &[String]) -> ContextualGraph {
    let mut out = graph.clone();
    let existing: HashSet<String> = out
        .nodes
        .iter()
        .filter(|n| n.origin == NodeOrigin::ExternalKeyword)
        .flat_map(|n| n.words.iter().cloned())
        .collect();
    let query_nodes: Vec<usize> = out
        .nodes
        .iter()
        .filter(|n| n.origin == NodeOrigin::QueryEntity)
        .map(|n| n.node_id)
        .collect();
    for keyword in keywords {
        if keyword.is_empty() || existing.contains(keyword) {
            continue;
        }
        let id = out.push_node(GraphNode {
            node_id: 0,
            words: vec![keyword.clone()],
            origin: NodeOrigin::ExternalKeyword,
            source_concept: None,
            source_sentence: None,
        });
        for &q in &query_nodes {
            out.add_edge(q, id);
        }
    }
    out.assert_invariants();
    out
}

/// Reorder a graph's nodes: node i of the result is node `perm[i]` of the
/// input, with adjacency and labels carried along. Diagnostic helper for
/// the permutation-equivariance checks.
pub fn permute(graph: &ContextualGraph, perm: &[usize]) -> ContextualGraph {
    let n = graph.node_count();
    assert_eq!(perm.len(), n, "permutation length mismatch");
    let mut out = ContextualGraph::new(graph.query_id.clone());
    for (new_id, &old_id) in perm.iter().enumerate() {
        let mut node = graph.nodes[old_id].clone();
        node.node_id = new_id;
        out.nodes.push(node);
    }
    out.adjacency = (0..n)
        .map(|i| (0..n).map(|j| graph.adjacency[perm[i]][perm[j]]).collect())
        .collect();
    out.labels = graph.labels.as_ref().map(|labels| perm.iter().map(|&i| labels[i]).collect());
    out.assert_invariants();
    out
}

/// JSONL dump record for a graph, used by the CLI artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphRecord {
    pub query_id: String,
    pub nodes: Vec<GraphRecordNode>,
    pub edges: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphRecordNode {
    pub id: usize,
    pub words: Vec<String>,
    pub origin: NodeOrigin,
}

impl From<&ContextualGraph> for GraphRecord {
    fn from(graph: &ContextualGraph) -> Self {
        GraphRecord {
            query_id: graph.query_id.clone(),
            nodes: graph
                .nodes
                .iter()
                .map(|n| GraphRecordNode { id: n.node_id, words: n.words.clone(), origin: n.origin })
                .collect(),
            edges: graph.edges(),
            labels: graph.labels.clone(),
        }
    }
}

impl GraphRecord {
    /// Rebuild an in-memory graph. Provenance fields not present in the
    /// dump format are restored as `None`.
    pub fn into_graph(self) -> ContextualGraph {
        let mut graph = ContextualGraph::new(self.query_id);
        for node in self.nodes {
            graph.push_node(GraphNode {
                node_id: 0,
                words: node.words,
                origin: node.origin,
                source_concept: match node.origin {
                    NodeOrigin::ExternalKeyword => None,
                    _ => Some(String::new()),
                },
                source_sentence: None,
            });
        }
        for (i, j) in self.edges {
            graph.add_edge(i, j);
        }
        graph.labels = self.labels;
        graph.assert_invariants();
        graph
    }
}
