//! Experiment harnesses: deterministic corpus splits, node-detection
//! metrics, the six-way query comparison against one shared index, and the
//! layer-count sweep.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctxgraph::ContextualGraph;
use crate::ir::{recall_at_k, search, IcdIndex, IrError, RetrievalResult};
use crate::model::{
    contextual_query, predict_relevant, score_graph, train, EmbeddingTable, ModelError,
    ModelParams, QueryGraph, TrainConfig,
};
use crate::text::{stable_hash, tokenize};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("variant `{0}` needs a trained model")]
    MissingModel(String),
}

/// Train/dev/test fractions; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.70, dev: 0.15, test: 0.15 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), EvalError> {
        let sum = self.train + self.dev + self.test;
        if self.train <= 0.0 || self.dev < 0.0 || self.test < 0.0 || (sum - 1.0).abs() > 1e-9 {
            return Err(EvalError::BadRatios((self.train, self.dev, self.test)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Split assignment is a pure function of (note_id, seed): notes keep their
/// split when the corpus grows, and reruns are reproducible.
pub fn assign_split(note_id: &str, seed: u64, ratios: &SplitRatios) -> Split {
    let fraction = stable_hash(seed, note_id.as_bytes()) as f64 / u64::MAX as f64;
    if fraction < ratios.train {
        Split::Train
    } else if fraction < ratios.train + ratios.dev {
        Split::Dev
    } else {
        Split::Test
    }
}

/// Partition note ids; disjoint by construction, union is the input.
pub fn split_corpus<'a>(
    note_ids: impl IntoIterator<Item = &'a str>,
    seed: u64,
    ratios: &SplitRatios,
) -> Result<BTreeMap<String, Split>, EvalError> {
    ratios.validate()?;
    Ok(note_ids
        .into_iter()
        .map(|id| (id.to_string(), assign_split(id, seed, ratios)))
        .collect())
}

/// Macro-average precision/recall/F1 over the two node classes
/// (relevant / non-relevant). Undefined ratios count as 0.
pub fn binary_macro_prf(y_true: &[u8], y_pred: &[u8]) -> (f64, f64, f64) {
    assert_eq!(y_true.len(), y_pred.len());
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut f_sum = 0.0;
    for class in [1u8, 0u8] {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut r#fn = 0usize;
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match ((p == class), (t == class)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => r#fn += 1,
                _ => {}
            }
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + r#fn == 0 { 0.0 } else { tp as f64 / (tp + r#fn) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
    }
    (p_sum / 2.0, r_sum / 2.0, f_sum / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Node-level classification metrics of a trained model on labeled graphs.
pub fn run_node_detection_eval(
    examples: &[QueryGraph],
    params: &ModelParams,
    emb: &EmbeddingTable,
    tau: f64,
) -> Result<PrfReport, EvalError> {
    let mut y_true = Vec::new();
    let mut y_pred = Vec::new();
    for example in examples {
        let labels = example
            .graph
            .labels
            .as_ref()
            .ok_or_else(|| ModelError::UnlabeledGraph(example.graph.query_id.clone()))?;
        let probs = score_graph(&example.graph, &example.query_tokens, emb, params)?;
        y_true.extend_from_slice(labels);
        y_pred.extend(predict_relevant(&probs, tau));
    }
    let (precision, recall, f1) = binary_macro_prf(&y_true, &y_pred);
    Ok(PrfReport { precision, recall, f1 })
}

/// The three query formulations sent to the shared retrieval index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryVariant {
    /// The extracted diagnosis text as-is.
    Normal,
    /// Query text plus the words of every graph node, unfiltered.
    FullGraph,
    /// Query text plus the words of the nodes the model predicts relevant.
    Contextual,
}

impl QueryVariant {
    pub const ALL: [QueryVariant; 3] =
        [QueryVariant::Normal, QueryVariant::FullGraph, QueryVariant::Contextual];

    pub fn label(&self) -> &'static str {
        match self {
            QueryVariant::Normal => "normal",
            QueryVariant::FullGraph => "full-graph",
            QueryVariant::Contextual => "contextual",
        }
    }
}

/// One query as the comparison harness sees it: raw text plus its graph.
#[derive(Debug, Clone)]
pub struct EvalQuery {
    pub query_id: String,
    pub text: String,
    pub graph: ContextualGraph,
}

impl EvalQuery {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }
}

/// Render one variant of a query. Degenerate (zero-node) graphs fall back
/// to the raw text for every variant.
pub fn variant_query_text(
    query: &EvalQuery,
    variant: QueryVariant,
    with_external: bool,
    params: Option<&ModelParams>,
    emb: &EmbeddingTable,
    external_keywords: &[String],
) -> Result<String, EvalError> {
    let base = match variant {
        QueryVariant::Normal => query.text.trim().to_string(),
        _ if query.graph.is_degenerate() => query.text.trim().to_string(),
        QueryVariant::FullGraph => {
            let all = vec![1u8; query.graph.node_count()];
            contextual_query(&query.text, &query.graph, &all)
        }
        QueryVariant::Contextual => {
            let params =
                params.ok_or_else(|| EvalError::MissingModel(variant.label().to_string()))?;
            let probs = score_graph(&query.graph, &query.tokens(), emb, params)?;
            let decisions = predict_relevant(&probs, params.tau);
            contextual_query(&query.text, &query.graph, &decisions)
        }
    };
    if with_external && !external_keywords.is_empty() {
        Ok(format!("{base} {}", external_keywords.join(" ")))
    } else {
        Ok(base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    /// k -> Recall@k over the gold-aligned queries.
    pub recall: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct QueryComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub query_count: usize,
}

/// Run every requested (variant, external) combination against the same
/// index and report Recall@k per row. `gold` maps query_id to the single
/// code the query is aligned to.
#[allow(clippy::too_many_arguments)]
pub fn run_query_comparison(
    queries: &[EvalQuery],
    gold: &BTreeMap<String, String>,
    params: Option<&ModelParams>,
    emb: &EmbeddingTable,
    index: &IcdIndex,
    external_keywords: &[String],
    ks: &[usize],
    variants: &[(QueryVariant, bool)],
) -> Result<QueryComparisonReport, EvalError> {
    let max_k = ks.iter().copied().max().unwrap_or(1);
    let mut rows = Vec::with_capacity(variants.len());
    for &(variant, with_external) in variants {
        let mut results: BTreeMap<String, RetrievalResult> = BTreeMap::new();
        for query in queries {
            let text =
                variant_query_text(query, variant, with_external, params, emb, external_keywords)?;
            results.insert(query.query_id.clone(), search(index, &text, max_k));
        }
        let mut recall = BTreeMap::new();
        for &k in ks {
            recall.insert(k, recall_at_k(&results, gold, k)?);
        }
        let label = if with_external {
            format!("{}+external", variant.label())
        } else {
            variant.label().to_string()
        };
        rows.push(ComparisonRow { variant: label, recall });
    }
    Ok(QueryComparisonReport { rows, query_count: gold.len() })
}

/// Train once per layer count with otherwise identical config and report
/// the test-set node-detection macro-F1 per count.
pub fn run_layer_sweep(
    train_set: &[QueryGraph],
    dev_set: &[QueryGraph],
    test_set: &[QueryGraph],
    emb: &EmbeddingTable,
    cfg: &TrainConfig,
    layer_counts: &[usize],
) -> Result<BTreeMap<usize, f64>, EvalError> {
    let mut table = BTreeMap::new();
    for &layers in layer_counts {
        let cfg = TrainConfig { gnn_layers: layers, ..cfg.clone() };
        let outcome = train(train_set, dev_set, emb, &cfg)?;
        let report = run_node_detection_eval(test_set, &outcome.params, emb, cfg.tau)?;
        table.insert(layers, report.f1);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroRow {
    pub variant: String,
    pub cutoff: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Combined output of one evaluation run. The config echo carries every
/// tunable needed to rerun it; the timestamp stays `None` unless the caller
/// supplies one, keeping report bytes reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub setup: String,
    pub seed: u64,
    pub timestamp: Option<String>,
    pub config_echo: serde_json::Value,
    pub split_sizes: BTreeMap<String, usize>,
    pub node_detection: Option<PrfReport>,
    pub query_comparison: Option<QueryComparisonReport>,
    pub retrieval_macro: Option<Vec<MacroRow>>,
    pub layer_sweep: Option<BTreeMap<usize, f64>>,
}

impl ExperimentReport {
    /// Aligned-column plain-text rendering.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("setup: {}    seed: {}\n", self.setup, self.seed));
        for (name, size) in &self.split_sizes {
            out.push_str(&format!("split {name:<6} {size} notes\n"));
        }
        if let Some(nd) = &self.node_detection {
            out.push_str("\nnode detection (macro over 2 classes)\n");
            out.push_str(&format!(
                "  precision {:.4}  recall {:.4}  f1 {:.4}\n",
                nd.precision, nd.recall, nd.f1
            ));
        }
        if let Some(qc) = &self.query_comparison {
            out.push_str(&format!("\nquery comparison ({} queries)\n", qc.query_count));
            let ks: Vec<usize> = qc
                .rows
                .first()
                .map(|r| r.recall.keys().copied().collect())
                .unwrap_or_default();
            out.push_str(&format!("  {:<22}", "variant"));
            for k in &ks {
                out.push_str(&format!(" recall@{k:<4}"));
            }
            out.push('\n');
            for row in &qc.rows {
                out.push_str(&format!("  {:<22}", row.variant));
                for k in &ks {
                    out.push_str(&format!(" {:<11.4}", row.recall.get(k).copied().unwrap_or(0.0)));
                }
                out.push('\n');
            }
        }
        if let Some(rows) = &self.retrieval_macro {
            out.push_str("\nretrieval macro metrics\n");
            for row in rows {
                out.push_str(&format!(
                    "  {:<22} cutoff {:<3} precision {:.4}  recall {:.4}  f1 {:.4}\n",
                    row.variant, row.cutoff, row.precision, row.recall, row.f1
                ));
            }
        }
        if let Some(sweep) = &self.layer_sweep {
            out.push_str("\nlayer sweep (test macro-F1)\n");
            for (layers, f1) in sweep {
                out.push_str(&format!("  {layers} layers  {f1:.4}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctxgraph::{GraphRecord, GraphRecordNode, NodeOrigin};
    use crate::ir::{build_index, IcdCode, IcdVersion};

    #[test]
    fn splits_are_pure_disjoint_and_cover() {
        let ids: Vec<String> = (0..200).map(|i| format!("note{i}")).collect();
        let ratios = SplitRatios::default();
        let a = split_corpus(ids.iter().map(|s| s.as_str()), 42, &ratios).unwrap();
        let b = split_corpus(ids.iter().map(|s| s.as_str()), 42, &ratios).unwrap();
        assert_eq!(a, b, "pure function of (note_id, seed)");
        assert_eq!(a.len(), ids.len());

        let count = |split: Split| a.values().filter(|&&s| s == split).count();
        let (tr, dv, te) = (count(Split::Train), count(Split::Dev), count(Split::Test));
        assert_eq!(tr + dv + te, ids.len());
        assert!(tr > dv && tr > te, "train is the largest split: {tr}/{dv}/{te}");

        let other = split_corpus(ids.iter().map(|s| s.as_str()), 43, &ratios).unwrap();
        assert_ne!(a, other, "different seed reshuffles");
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(SplitRatios { train: 0.5, dev: 0.1, test: 0.1 }.validate().is_err());
        assert!(SplitRatios { train: 0.0, dev: 0.5, test: 0.5 }.validate().is_err());
    }

    #[test]
    fn binary_macro_prf_hand_computed() {
        let (p, r, f) = binary_macro_prf(&[1, 1, 1], &[1, 1, 1]);
        assert_eq!((p, r, f), (0.5, 0.5, 0.5), "all-positive: class 0 contributes zeros");

        let (p, r, f) = binary_macro_prf(&[1, 0, 1, 0], &[1, 0, 1, 0]);
        assert_eq!((p, r, f), (1.0, 1.0, 1.0));

        // class 1: tp=2 fp=1 fn=1; class 0: tp=1 fp=1 fn=1.
        let (p, r, f) = binary_macro_prf(&[1, 1, 0, 0, 1], &[1, 0, 0, 1, 1]);
        let expected = (2.0 / 3.0 + 0.5) / 2.0;
        assert!((p - expected).abs() < 1e-12);
        assert!((r - expected).abs() < 1e-12);
        assert!((f - expected).abs() < 1e-12);
    }

    #[test]
    fn all_zero_predictions_have_zero_positive_recall() {
        let (_, r, _) = binary_macro_prf(&[1, 0, 1], &[0, 0, 0]);
        // class 1 recall 0, class 0 recall 1 -> macro 0.5.
        assert_eq!(r, 0.5);
    }

    fn eval_query(id: &str, text: &str, node_words: &[&str]) -> EvalQuery {
        let graph = GraphRecord {
            query_id: id.into(),
            nodes: node_words
                .iter()
                .enumerate()
                .map(|(i, w)| GraphRecordNode {
                    id: i,
                    words: w.split(' ').map(|s| s.to_string()).collect(),
                    origin: if i == 0 { NodeOrigin::QueryEntity } else { NodeOrigin::ContextEntity },
                })
                .collect(),
            edges: (1..node_words.len()).map(|i| (0, i)).collect(),
            labels: None,
        }
        .into_graph();
        EvalQuery { query_id: id.into(), text: text.into(), graph }
    }

    #[test]
    fn variant_texts_without_model() {
        let emb = EmbeddingTable::random(4, 0);
        let q = eval_query("q1", "Sciatica", &["sciatica", "left"]);
        let normal =
            variant_query_text(&q, QueryVariant::Normal, false, None, &emb, &[]).unwrap();
        assert_eq!(normal, "Sciatica");
        let full =
            variant_query_text(&q, QueryVariant::FullGraph, false, None, &emb, &[]).unwrap();
        assert_eq!(full, "Sciatica left");
        let ext = variant_query_text(
            &q,
            QueryVariant::Normal,
            true,
            None,
            &emb,
            &["unspecified".to_string()],
        )
        .unwrap();
        assert_eq!(ext, "Sciatica unspecified");
        assert!(matches!(
            variant_query_text(&q, QueryVariant::Contextual, false, None, &emb, &[]),
            Err(EvalError::MissingModel(_))
        ));
    }

    #[test]
    fn single_variant_yields_single_row() {
        let emb = EmbeddingTable::random(4, 0);
        let index = build_index(&[IcdCode {
            code: "M54.32".into(),
            description: "Sciatica left side".into(),
            version: IcdVersion::Icd10,
        }])
        .unwrap();
        let queries = vec![eval_query("q1", "Sciatica", &["sciatica", "left"])];
        let gold: BTreeMap<String, String> =
            [("q1".to_string(), "M54.32".to_string())].into_iter().collect();
        let report = run_query_comparison(
            &queries,
            &gold,
            None,
            &emb,
            &index,
            &[],
            &[1, 8],
            &[(QueryVariant::Normal, false)],
        )
        .unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].recall[&1], 1.0);
    }

    #[test]
    fn node_detection_eval_perfect_and_degenerate() {
        use crate::model::{train, TrainConfig};
        let emb = EmbeddingTable::random(8, 3);
        let mk = |labels: &[u8]| {
            let mut g = eval_query("q", "q", &["good", "bad"]).graph;
            g.labels = Some(labels.to_vec());
            QueryGraph { query_tokens: vec!["q".into()], graph: g }
        };
        let examples = vec![mk(&[1, 0])];
        let cfg = TrainConfig {
            embedding_dim: 8,
            hidden_dim: 4,
            gnn_layers: 1,
            learning_rate: 0.05,
            epochs: 80,
            l2_lambda: 0.0,
            seed: 3,
            ..TrainConfig::default()
        };
        let outcome = train(&examples, &[], &emb, &cfg).unwrap();
        let report = run_node_detection_eval(&examples, &outcome.params, &emb, cfg.tau).unwrap();
        assert_eq!(report.f1, 1.0, "overfit single graph perfectly");
    }

    #[test]
    fn layer_sweep_runs_per_count_and_repeats_identically() {
        let emb = EmbeddingTable::random(6, 5);
        let mk = |id: &str| {
            let mut g = eval_query(id, "q", &["good", "bad"]).graph;
            g.labels = Some(vec![1, 0]);
            QueryGraph { query_tokens: vec!["q".into()], graph: g }
        };
        let examples = vec![mk("a"), mk("b")];
        let cfg = TrainConfig {
            embedding_dim: 6,
            hidden_dim: 4,
            gnn_layers: 1,
            epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let sweep =
            run_layer_sweep(&examples, &examples, &examples, &emb, &cfg, &[1, 2, 3, 4]).unwrap();
        assert_eq!(sweep.len(), 4);
        let again =
            run_layer_sweep(&examples, &examples, &examples, &emb, &cfg, &[1, 2, 3, 4]).unwrap();
        assert_eq!(sweep, again);
    }

    #[test]
    fn report_renders_and_round_trips() {
        let report = ExperimentReport {
            setup: "unit".into(),
            seed: 1,
            timestamp: None,
            config_echo: serde_json::json!({"k": 1}),
            split_sizes: [("train".to_string(), 3)].into_iter().collect(),
            node_detection: Some(PrfReport { precision: 1.0, recall: 0.5, f1: 2.0 / 3.0 }),
            query_comparison: Some(QueryComparisonReport {
                rows: vec![ComparisonRow {
                    variant: "normal".into(),
                    recall: [(1, 0.25)].into_iter().collect(),
                }],
                query_count: 4,
            }),
            retrieval_macro: None,
            layer_sweep: None,
        };
        let text = report.render_text();
        assert!(text.contains("recall@1"));
        assert!(text.contains("normal"));
        let json = serde_json::to_string(&report).unwrap();
        let parsed: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.render_text(), text);
    }
}
