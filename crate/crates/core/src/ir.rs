//! Ranked retrieval over ICD code descriptions.
//!
//! BM25 with k1 = 1.2, b = 0.75 and IDF = ln(1 + (N - df + 0.5)/(df + 0.5)),
//! replicated in-process so rankings are bit-reproducible. Also hosts the
//! retrieval metrics (Recall@k, macro precision/recall/F1).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IcdVersion {
    Icd9,
    #[default]
    Icd10,
}

/// One taxonomy entry: code plus its human-readable description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcdCode {
    pub code: String,
    pub description: String,
    pub version: IcdVersion,
}

/// Inverted index over code descriptions. Immutable after build.
#[derive(Debug, Clone)]
pub struct IcdIndex {
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    doc_count: usize,
    codes: Vec<IcdCode>,
    ordinal_of: HashMap<String, usize>,
}

/// Ranked `(code, score)` list, score descending, ties by code ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RetrievalResult {
    pub ranked: Vec<(String, f64)>,
}

impl RetrievalResult {
    pub fn rank_of(&self, code: &str) -> Option<usize> {
        self.ranked.iter().position(|(c, _)| c == code).map(|p| p + 1)
    }

    pub fn top_codes(&self, k: usize) -> BTreeSet<String> {
        self.ranked.iter().take(k).map(|(c, _)| c.clone()).collect()
    }
}

#[derive(Debug, Error)]
pub enum IrError {
    #[error("duplicate code `{0}`")]
    DuplicateCode(String),
    #[error("cannot build an index over zero codes")]
    EmptyCodeList,
    #[error("invalid code record: {0}")]
    InvalidCode(String),
    #[error("k must be >= 1")]
    InvalidK,
    #[error("line {line}: expected `code<TAB>description`")]
    BadTsvLine { line: usize },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Load the `code<TAB>description` TSV release format.
pub fn load_codes(path: &Path, version: IcdVersion) -> Result<Vec<IcdCode>, IrError> {
    let file = File::open(path).map_err(|source| IrError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut codes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IrError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let (code, description) =
            line.split_once('\t').ok_or(IrError::BadTsvLine { line: i + 1 })?;
        codes.push(IcdCode {
            code: code.trim().to_string(),
            description: description.trim().to_string(),
            version,
        });
    }
    Ok(codes)
}

/// Build the inverted index. Codes must be unique and non-empty.
pub fn build_index(codes: &[IcdCode]) -> Result<IcdIndex, IrError> {
    if codes.is_empty() {
        return Err(IrError::EmptyCodeList);
    }
    let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
    let mut doc_lengths = Vec::with_capacity(codes.len());
    let mut ordinal_of = HashMap::new();

    for (ordinal, code) in codes.iter().enumerate() {
        if code.code.is_empty() || code.description.is_empty() {
            return Err(IrError::InvalidCode(code.code.clone()));
        }
        if ordinal_of.insert(code.code.clone(), ordinal).is_some() {
            return Err(IrError::DuplicateCode(code.code.clone()));
        }
        let tokens = tokenize(&code.description);
        doc_lengths.push(tokens.len() as u32);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for token in tokens {
            *tf.entry(token).or_insert(0) += 1;
        }
        for (token, count) in tf {
            postings.entry(token).or_default().push((ordinal, count));
        }
    }

    let avg_doc_length = doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / codes.len() as f64;
    Ok(IcdIndex {
        postings,
        doc_lengths,
        avg_doc_length,
        doc_count: codes.len(),
        codes: codes.to_vec(),
        ordinal_of,
    })
}

impl IcdIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn codes(&self) -> &[IcdCode] {
        &self.codes
    }

    pub fn description_of(&self, code: &str) -> Option<&str> {
        self.ordinal_of.get(code).map(|&i| self.codes[i].description.as_str())
    }

    pub fn posting(&self, token: &str) -> Option<&[(usize, u32)]> {
        self.postings.get(token).map(|v| v.as_slice())
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

/// BM25 search: documents sharing at least one query term, scored by the
/// formula above, top `k` in (score desc, code asc) order. An empty query
/// after tokenization yields an empty result.
pub fn search(index: &IcdIndex, query: &str, k: usize) -> RetrievalResult {
    let tokens = tokenize(query);
    if tokens.is_empty() {
        return RetrievalResult::default();
    }
    let mut scores: HashMap<usize, f64> = HashMap::new();
    for token in &tokens {
        let Some(postings) = index.posting(token) else {
            continue;
        };
        let idf = index.idf(postings.len());
        for &(doc, tf) in postings {
            let tf = tf as f64;
            let len = index.doc_lengths[doc] as f64;
            let norm = 1.0 - BM25_B + BM25_B * len / index.avg_doc_length;
            let contribution = idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
            *scores.entry(doc).or_insert(0.0) += contribution;
        }
    }
    let mut ranked: Vec<(String, f64)> = scores
        .into_iter()
        .map(|(doc, score)| (index.codes[doc].code.clone(), score))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).expect("finite scores").then_with(|| a.0.cmp(&b.0))
    });
    ranked.truncate(k);
    RetrievalResult { ranked }
}

/// Fraction of gold queries whose gold code appears in the top `k` results.
pub fn recall_at_k(
    results: &BTreeMap<String, RetrievalResult>,
    gold: &BTreeMap<String, String>,
    k: usize,
) -> Result<f64, IrError> {
    if k < 1 {
        return Err(IrError::InvalidK);
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let hits = gold
        .iter()
        .filter(|(query_id, code)| {
            results
                .get(*query_id)
                .map(|r| r.ranked.iter().take(k).any(|(c, _)| c == *code))
                .unwrap_or(false)
        })
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Macro-averaged precision, recall and F1 over the union label universe.
/// Undefined per-label ratios (0/0) count as 0.
pub fn macro_prf(
    predicted: &BTreeMap<String, BTreeSet<String>>,
    gold: &BTreeMap<String, BTreeSet<String>>,
) -> (f64, f64, f64) {
    let mut labels: BTreeSet<&String> = BTreeSet::new();
    for set in predicted.values().chain(gold.values()) {
        labels.extend(set.iter());
    }
    if labels.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let queries: BTreeSet<&String> = predicted.keys().chain(gold.keys()).collect();
    let empty = BTreeSet::new();

    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for label in &labels {
        let (mut tp, mut fp, mut r#fn) = (0usize, 0usize, 0usize);
        for query in &queries {
            let in_pred = predicted.get(*query).unwrap_or(&empty).contains(*label);
            let in_gold = gold.get(*query).unwrap_or(&empty).contains(*label);
            match (in_pred, in_gold) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => r#fn += 1,
                (false, false) => {}
            }
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + r#fn);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
    }
    let n = labels.len() as f64;
    (p_sum / n, r_sum / n, f_sum / n)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
