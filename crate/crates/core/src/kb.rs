//! In-memory medical knowledge base: concepts with synonyms, undirected
//! typed edges, a surface-form index, and bounded simple-path queries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_surface;

/// A medical concept and its surface forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub concept_id: String,
    pub canonical_name: String,
    /// Lowercase-normalized, deduplicated, never equal to the normalized
    /// canonical name.
    pub synonyms: Vec<String>,
    /// e.g. "condition", "body part", "symptom", "procedure".
    pub semantic_type: String,
}

/// An undirected typed edge; endpoints stored in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub a: String,
    pub b: String,
    pub relation: String,
}

/// Immutable concept graph with a surface index. Built once by [`load_kb`];
/// all queries are read-only.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    concepts: BTreeMap<String, Concept>,
    edges: BTreeSet<Edge>,
    /// Normalized surface string -> concept ids carrying it.
    surface_index: HashMap<String, Vec<String>>,
    /// Neighbor sets in lexicographic order (deterministic traversal).
    adjacency: BTreeMap<String, BTreeSet<String>>,
    /// Longest surface form measured in tokens, for the entity matcher.
    max_surface_tokens: usize,
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("line {line}: duplicate concept_id `{id}`")]
    DuplicateConcept { line: usize, id: String },
    #[error("line {line}: edge ({src}, {dst}) references unknown concept `{unknown}`")]
    DanglingEdge { line: usize, src: String, dst: String, unknown: String },
    #[error("line {line}: self-loop edge on `{id}`")]
    SelfLoop { line: usize, id: String },
    #[error("unknown concept_id `{0}`")]
    UnknownConcept(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum KbRecord {
    Concept {
        id: String,
        name: String,
        #[serde(default)]
        synonyms: Vec<String>,
        #[serde(rename = "type", default)]
        semantic_type: String,
    },
    Edge {
        src: String,
        dst: String,
        #[serde(default)]
        rel: String,
    },
}

impl KnowledgeBase {
    /// Assemble a KB from parts, establishing every invariant. Line numbers
    /// accompany the records for error reporting; pass 0 when not from a file.
    pub fn build(
        concepts: Vec<(Concept, usize)>,
        edges: Vec<(String, String, String, usize)>,
    ) -> Result<Self, KbError> {
        let mut kb = KnowledgeBase::default();
        for (mut concept, line) in concepts {
            if concept.canonical_name.trim().is_empty() {
                return Err(KbError::Record { line, msg: "empty canonical name".into() });
            }
            let canonical_norm = normalize_surface(&concept.canonical_name);
            let mut seen = BTreeSet::new();
            concept.synonyms = concept
                .synonyms
                .iter()
                .map(|s| normalize_surface(s))
                .filter(|s| !s.is_empty() && *s != canonical_norm && seen.insert(s.clone()))
                .collect();
            if kb.concepts.contains_key(&concept.concept_id) {
                return Err(KbError::DuplicateConcept { line, id: concept.concept_id });
            }
            kb.concepts.insert(concept.concept_id.clone(), concept);
        }
        for (src, dst, relation, line) in edges {
            for endpoint in [&src, &dst] {
                if !kb.concepts.contains_key(endpoint) {
                    return Err(KbError::DanglingEdge {
                        line,
                        src: src.clone(),
                        dst: dst.clone(),
                        unknown: endpoint.clone(),
                    });
                }
            }
            if src == dst {
                return Err(KbError::SelfLoop { line, id: src });
            }
            let (a, b) = if src <= dst { (src, dst) } else { (dst, src) };
            kb.edges.insert(Edge { a, b, relation });
        }
        for edge in &kb.edges {
            kb.adjacency.entry(edge.a.clone()).or_default().insert(edge.b.clone());
            kb.adjacency.entry(edge.b.clone()).or_default().insert(edge.a.clone());
        }
        for concept in kb.concepts.values() {
            let canonical_norm = normalize_surface(&concept.canonical_name);
            let mut surfaces = vec![canonical_norm];
            surfaces.extend(concept.synonyms.iter().cloned());
            for surface in surfaces {
                if surface.is_empty() {
                    continue;
                }
                let tokens = surface.split(' ').count();
                kb.max_surface_tokens = kb.max_surface_tokens.max(tokens);
                let ids = kb.surface_index.entry(surface).or_default();
                if !ids.contains(&concept.concept_id) {
                    ids.push(concept.concept_id.clone());
                }
            }
        }
        for ids in kb.surface_index.values_mut() {
            ids.sort();
        }
        Ok(kb)
    }

    pub fn concept(&self, id: &str) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn concept_count(&self) -> usize {
        self.concepts.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn max_surface_tokens(&self) -> usize {
        self.max_surface_tokens
    }

    pub fn neighbors(&self, id: &str) -> impl Iterator<Item = &String> {
        self.adjacency.get(id).into_iter().flatten()
    }

    /// Is the normalized surface a known concept surface form?
    pub fn has_surface(&self, normalized: &str) -> bool {
        self.surface_index.contains_key(normalized)
    }
}

/// Load the KB JSONL format: concept records then edge records.
pub fn load_kb(path: &Path) -> Result<KnowledgeBase, KbError> {
    load_kb_with(path, None)
}

/// Like [`load_kb`] but keeping only edges whose relation label is in the
/// allow-list (all relations when `None`).
pub fn load_kb_with(path: &Path, relations: Option<&[String]>) -> Result<KnowledgeBase, KbError> {
    let file = File::open(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut concepts = Vec::new();
    let mut edges = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: KbRecord = serde_json::from_str(&line)
            .map_err(|e| KbError::Record { line: line_no, msg: e.to_string() })?;
        match record {
            KbRecord::Concept { id, name, synonyms, semantic_type } => concepts.push((
                Concept { concept_id: id, canonical_name: name, synonyms, semantic_type },
                line_no,
            )),
            KbRecord::Edge { src, dst, rel } => {
                if relations.is_none_or(|allowed| allowed.contains(&rel)) {
                    edges.push((src, dst, rel, line_no));
                }
            }
        }
    }
    KnowledgeBase::build(concepts, edges)
}

/// Write a KB in the JSONL format `load_kb` reads.
pub fn save_kb(path: &Path, kb: &KnowledgeBase) -> Result<(), KbError> {
    let mut file = File::create(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let io_err = |source| KbError::Io { path: path.display().to_string(), source };
    for concept in kb.concepts() {
        let record = serde_json::json!({
            "kind": "concept",
            "id": concept.concept_id,
            "name": concept.canonical_name,
            "synonyms": concept.synonyms,
            "type": concept.semantic_type,
        });
        writeln!(file, "{record}").map_err(io_err)?;
    }
    for edge in kb.edges() {
        let record = serde_json::json!({
            "kind": "edge", "src": edge.a, "dst": edge.b, "rel": edge.relation,
        });
        writeln!(file, "{record}").map_err(io_err)?;
    }
    Ok(())
}

/// Does an acyclic path of at most `max_hops` edges connect `src` and `dst`?
/// Returns a witness path when one exists. `src == dst` counts as a 0-hop
/// path. Traversal order is lexicographic, so the witness is deterministic.
pub fn simple_path_exists(
    kb: &KnowledgeBase,
    src: &str,
    dst: &str,
    max_hops: usize,
) -> Result<Option<Vec<String>>, KbError> {
    for id in [src, dst] {
        if kb.concept(id).is_none() {
            return Err(KbError::UnknownConcept(id.to_string()));
        }
    }
    if src == dst {
        return Ok(Some(vec![src.to_string()]));
    }
    let mut path = vec![src.to_string()];
    if dfs_simple(kb, src, dst, max_hops, &mut path) {
        Ok(Some(path))
    } else {
        Ok(None)
    }
}

fn dfs_simple(
    kb: &KnowledgeBase,
    current: &str,
    dst: &str,
    hops_left: usize,
    path: &mut Vec<String>,
) -> bool {
    if hops_left == 0 {
        return false;
    }
    for next in kb.neighbors(current) {
        if path.iter().any(|p| p == next) {
            continue;
        }
        path.push(next.clone());
        if next == dst || dfs_simple(kb, next, dst, hops_left - 1, path) {
            return true;
        }
        path.pop();
    }
    false
}

/// Concept candidates for a surface string: canonical-name matches first,
/// then the rest, each group in lexicographic id order. Empty when unknown.
pub fn lookup_surface(kb: &KnowledgeBase, surface: &str) -> Vec<String> {
    let normalized = normalize_surface(surface);
    let Some(ids) = kb.surface_index.get(&normalized) else {
        return Vec::new();
    };
    let mut ids = ids.clone();
    ids.sort_by_key(|id| {
        let canonical = kb
            .concept(id)
            .map(|c| normalize_surface(&c.canonical_name) == normalized)
            .unwrap_or(false);
        (!canonical, id.clone())
    });
    ids
}
