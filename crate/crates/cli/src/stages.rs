//! The six pipeline stages. Each stage reads the previous stage's artifacts
//! from the output directory, never the raw inputs, and records what it
//! wrote in the manifest. All outputs are deterministic: rerunning a stage
//! with unchanged inputs rewrites identical bytes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use icdq_core::corpus::{
    extract_queries, load_corpus, save_corpus, ClinicalNote, CorpusFormat, DiagnosisQuery,
    ExtractionWarning,
};
use icdq_core::ctxgraph::{build_graph, compute_external_keywords, ContextualGraph, GraphRecord};
use icdq_core::eval::{
    run_layer_sweep, run_node_detection_eval, run_query_comparison, split_corpus, EvalQuery,
    ExperimentReport, MacroRow, QueryVariant, Split,
};
use icdq_core::ir::{build_index, load_codes, macro_prf, search, IcdIndex};
use icdq_core::kb::{load_kb, load_kb_with, save_kb, KnowledgeBase};
use icdq_core::model::{
    contextual_query, predict_relevant, score_graph, train, EmbeddingTable, EpochStats,
    ModelParams, QueryGraph,
};
use icdq_core::nel::{link_note, link_query};
use icdq_core::text::tokenize;

use crate::config::PipelineConfig;
use crate::manifest::Manifest;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const KB_FILE: &str = "kb.jsonl";
pub const ICD_FILE: &str = "icd.tsv";
pub const INDEX_META_FILE: &str = "index_meta.json";
pub const GRAPHS_FILE: &str = "graphs.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const WARNINGS_FILE: &str = "warnings.jsonl";
pub const LABELED_FILE: &str = "labeled.jsonl";
pub const ALIGNMENT_FILE: &str = "alignment.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRACE_FILE: &str = "trace.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut writer, &item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(item);
    }
    Ok(out)
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize, Deserialize)]
struct IndexMeta {
    doc_count: usize,
    avg_doc_length: f64,
    version: icdq_core::ir::IcdVersion,
}

#[derive(Serialize, Deserialize)]
struct TraceFile {
    best_epoch: Option<usize>,
    warnings: Vec<String>,
    pos_weight_mode: String,
    trace: Vec<EpochStats>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub note_id: String,
    pub query: String,
    pub contextual_query: String,
    pub results: Vec<(String, f64)>,
}

fn load_embeddings(config: &PipelineConfig) -> Result<EmbeddingTable> {
    if config.embeddings.as_os_str().is_empty() {
        return Ok(EmbeddingTable::random(config.embedding_dim, config.seed));
    }
    let table = EmbeddingTable::load(&config.embeddings, config.seed)?;
    if table.dimension() != config.embedding_dim {
        bail!(
            "embedding file dimension {} does not match configured embedding_dim {}",
            table.dimension(),
            config.embedding_dim
        );
    }
    Ok(table)
}

fn load_index_artifact(config: &PipelineConfig) -> Result<IcdIndex> {
    let codes = load_codes(&config.out.join(ICD_FILE), config.icd_version)?;
    Ok(build_index(&codes)?)
}

fn load_corpus_artifact(config: &PipelineConfig) -> Result<Vec<ClinicalNote>> {
    Ok(load_corpus(&config.out.join(CORPUS_FILE), CorpusFormat::Jsonl)?)
}

/// Validate and normalize the three inputs into the output directory.
pub fn run_ingest(config: &PipelineConfig) -> Result<String> {
    std::fs::create_dir_all(&config.out)?;
    let mut notes = load_corpus(&config.corpus, CorpusFormat::Jsonl)?;
    notes.sort_by(|a, b| a.note_id.cmp(&b.note_id));
    let kb = load_kb_with(&config.kb, config.kb_relation_allowlist())?;
    let codes = load_codes(&config.icd, config.icd_version)?;
    let index = build_index(&codes)?;

    save_corpus(&config.out.join(CORPUS_FILE), &notes)?;
    save_kb(&config.out.join(KB_FILE), &kb)?;
    let mut tsv = String::new();
    for code in &codes {
        tsv.push_str(&format!("{}\t{}\n", code.code, code.description));
    }
    std::fs::write(config.out.join(ICD_FILE), tsv)?;
    write_json_pretty(
        &config.out.join(INDEX_META_FILE),
        &IndexMeta {
            doc_count: index.doc_count(),
            avg_doc_length: index.avg_doc_length(),
            version: config.icd_version,
        },
    )?;

    let mut manifest = Manifest::load(&config.out)?;
    manifest.record_stage(
        "ingest",
        &config.hash(),
        &config.out,
        &[CORPUS_FILE, KB_FILE, ICD_FILE, INDEX_META_FILE],
    )?;
    manifest.save(&config.out)?;
    Ok(format!(
        "ingested {} notes, {} concepts, {} edges, {} codes",
        notes.len(),
        kb.concept_count(),
        kb.edge_count(),
        index.doc_count()
    ))
}

/// Extract queries and build one contextual graph per query.
pub fn run_build_graphs(config: &PipelineConfig) -> Result<String> {
    let hash = config.hash();
    let mut manifest = Manifest::load(&config.out)?;
    manifest.require_stage("ingest", &hash)?;

    let notes = load_corpus_artifact(config)?;
    let kb: KnowledgeBase = load_kb(&config.out.join(KB_FILE))?;
    let rules = config.extraction_rules();

    let mut queries: Vec<DiagnosisQuery> = Vec::new();
    let mut graphs: Vec<GraphRecord> = Vec::new();
    let mut warnings: Vec<ExtractionWarning> = Vec::new();
    let mut degenerate = 0usize;

    for note in &notes {
        let outcome = extract_queries(note, &rules);
        warnings.extend(outcome.warnings);
        let note_entities = link_note(note, &kb);
        for query in outcome.queries {
            let query_entities = link_query(&query, &kb);
            let graph = build_graph(&query, &query_entities, &note_entities, &kb, config.max_hops);
            if graph.is_degenerate() {
                degenerate += 1;
                log::warn!("query `{}` produced a zero-node graph", query.query_id);
            }
            graphs.push(GraphRecord::from(&graph));
            queries.push(query);
        }
    }

    write_jsonl(&config.out.join(QUERIES_FILE), &queries)?;
    write_jsonl(&config.out.join(GRAPHS_FILE), &graphs)?;
    write_jsonl(&config.out.join(WARNINGS_FILE), &warnings)?;

    manifest.record_stage(
        "build-graphs",
        &hash,
        &config.out,
        &[QUERIES_FILE, GRAPHS_FILE, WARNINGS_FILE],
    )?;
    manifest.save(&config.out)?;
    Ok(format!(
        "built {} graphs for {} notes ({} degenerate, {} warnings)",
        graphs.len(),
        notes.len(),
        degenerate,
        warnings.len()
    ))
}

fn load_graphs(config: &PipelineConfig, file: &str) -> Result<Vec<ContextualGraph>> {
    let records: Vec<GraphRecord> = read_jsonl(&config.out.join(file))?;
    Ok(records.into_iter().map(GraphRecord::into_graph).collect())
}

fn load_queries(config: &PipelineConfig) -> Result<Vec<DiagnosisQuery>> {
    read_jsonl(&config.out.join(QUERIES_FILE))
}

/// Align queries to gold codes and label graph nodes by Jaccard overlap
/// with the aligned code's description.
pub fn run_label(config: &PipelineConfig) -> Result<String> {
    let hash = config.hash();
    let mut manifest = Manifest::load(&config.out)?;
    manifest.require_stage("ingest", &hash)?;
    manifest.require_stage("build-graphs", &hash)?;

    let notes = load_corpus_artifact(config)?;
    let index = load_index_artifact(config)?;
    let graphs = load_graphs(config, GRAPHS_FILE)?;
    let queries = load_queries(config)?;

    let gold_codes_of: BTreeMap<String, BTreeSet<String>> =
        notes.iter().map(|n| (n.note_id.clone(), n.gold_codes.clone())).collect();
    let labeled = icdq_core::supervision::build_labeled_set(
        &graphs,
        &queries,
        &gold_codes_of,
        &index,
        config.label_threshold,
    );

    let records: Vec<GraphRecord> = labeled.graphs.iter().map(GraphRecord::from).collect();
    write_jsonl(&config.out.join(LABELED_FILE), &records)?;
    write_json_pretty(&config.out.join(ALIGNMENT_FILE), &labeled.alignment)?;

    manifest.record_stage("label", &hash, &config.out, &[LABELED_FILE, ALIGNMENT_FILE])?;
    manifest.save(&config.out)?;
    Ok(format!(
        "labeled {} of {} graphs at t = {}",
        labeled.graphs.len(),
        graphs.len(),
        config.label_threshold
    ))
}

fn query_tokens_by_id(queries: &[DiagnosisQuery]) -> BTreeMap<String, Vec<String>> {
    queries.iter().map(|q| (q.query_id.clone(), tokenize(&q.text))).collect()
}

fn note_of_query(query_id: &str, queries: &BTreeMap<String, String>) -> Result<String> {
    queries
        .get(query_id)
        .cloned()
        .with_context(|| format!("query `{query_id}` missing from queries artifact"))
}

/// Split labeled graphs by note, train on the train split with the dev
/// split for model selection, and write the checkpoint plus loss trace.
pub fn run_train(config: &PipelineConfig) -> Result<String> {
    let hash = config.hash();
    let mut manifest = Manifest::load(&config.out)?;
    for stage in ["ingest", "build-graphs", "label"] {
        manifest.require_stage(stage, &hash)?;
    }

    let notes = load_corpus_artifact(config)?;
    let labeled = load_graphs(config, LABELED_FILE)?;
    let queries = load_queries(config)?;
    let tokens_of = query_tokens_by_id(&queries);
    let note_of: BTreeMap<String, String> =
        queries.iter().map(|q| (q.query_id.clone(), q.note_id.clone())).collect();
    let splits = split_corpus(
        notes.iter().map(|n| n.note_id.as_str()),
        config.seed,
        &config.split_ratios(),
    )?;

    let mut train_set = Vec::new();
    let mut dev_set = Vec::new();
    for graph in labeled {
        let note_id = note_of_query(&graph.query_id, &note_of)?;
        let tokens = tokens_of
            .get(&graph.query_id)
            .with_context(|| format!("query `{}` missing tokens", graph.query_id))?;
        let example = QueryGraph { query_tokens: tokens.clone(), graph };
        match splits.get(&note_id) {
            Some(Split::Train) => train_set.push(example),
            Some(Split::Dev) => dev_set.push(example),
            _ => {}
        }
    }
    if train_set.is_empty() {
        bail!("no labeled graphs fell into the train split; corpus too small or ratios too tight");
    }

    let emb = load_embeddings(config)?;
    let train_config = config.train_config();
    let outcome = train(&train_set, &dev_set, &emb, &train_config)?;
    for warning in &outcome.warnings {
        log::warn!("{warning}");
    }

    outcome.params.save(&config.out.join(MODEL_FILE), &train_config)?;
    write_json_pretty(
        &config.out.join(TRACE_FILE),
        &TraceFile {
            best_epoch: outcome.best_epoch,
            warnings: outcome.warnings.clone(),
            pos_weight_mode: match config.pos_weight {
                w if w > 0.0 => format!("fixed {w}"),
                _ => "auto (neg/pos ratio)".to_string(),
            },
            trace: outcome.trace.clone(),
        },
    )?;

    manifest.record_stage("train", &hash, &config.out, &[MODEL_FILE, TRACE_FILE])?;
    manifest.save(&config.out)?;
    Ok(format!(
        "trained on {} graphs ({} dev) for {} epochs, best dev epoch {:?}",
        train_set.len(),
        dev_set.len(),
        config.epochs,
        outcome.best_epoch
    ))
}

/// Run inference for every query: contextual query plus top-k codes.
pub fn run_predict(config: &PipelineConfig) -> Result<String> {
    let hash = config.hash();
    let mut manifest = Manifest::load(&config.out)?;
    for stage in ["ingest", "build-graphs", "train"] {
        manifest.require_stage(stage, &hash)?;
    }

    let queries = load_queries(config)?;
    let graphs = load_graphs(config, GRAPHS_FILE)?;
    let graph_of: BTreeMap<String, &ContextualGraph> =
        graphs.iter().map(|g| (g.query_id.clone(), g)).collect();
    let (params, _) = ModelParams::load(&config.out.join(MODEL_FILE))?;
    let emb = load_embeddings(config)?;
    let index = load_index_artifact(config)?;

    let mut records = Vec::with_capacity(queries.len());
    for query in &queries {
        let graph = graph_of
            .get(&query.query_id)
            .with_context(|| format!("graph for `{}` missing", query.query_id))?;
        let q_c = if graph.is_degenerate() {
            query.text.trim().to_string()
        } else {
            let probs = score_graph(graph, &tokenize(&query.text), &emb, &params)?;
            let decisions = predict_relevant(&probs, params.tau);
            contextual_query(&query.text, graph, &decisions)
        };
        let result = search(&index, &q_c, config.predict_k);
        records.push(PredictionRecord {
            query_id: query.query_id.clone(),
            note_id: query.note_id.clone(),
            query: query.text.clone(),
            contextual_query: q_c,
            results: result.ranked,
        });
    }
    write_jsonl(&config.out.join(PREDICTIONS_FILE), &records)?;

    manifest.record_stage("predict", &hash, &config.out, &[PREDICTIONS_FILE])?;
    manifest.save(&config.out)?;
    Ok(format!("predicted top-{} codes for {} queries", config.predict_k, records.len()))
}

/// Corpus vocabulary: every token of every section of every note.
fn corpus_vocabulary(notes: &[ClinicalNote]) -> HashSet<String> {
    let mut vocab = HashSet::new();
    for note in notes {
        for text in note.sections.values() {
            vocab.extend(tokenize(text));
        }
    }
    vocab
}

/// Node-detection metrics, the six-variant query comparison, retrieval
/// macro metrics, and (optionally) the layer sweep on the test split.
pub fn run_evaluate(config: &PipelineConfig) -> Result<String> {
    let hash = config.hash();
    let mut manifest = Manifest::load(&config.out)?;
    for stage in ["ingest", "build-graphs", "label", "train"] {
        manifest.require_stage(stage, &hash)?;
    }

    let notes = load_corpus_artifact(config)?;
    let queries = load_queries(config)?;
    let graphs = load_graphs(config, GRAPHS_FILE)?;
    let labeled = load_graphs(config, LABELED_FILE)?;
    let alignment: BTreeMap<String, String> = {
        let text = std::fs::read_to_string(config.out.join(ALIGNMENT_FILE))?;
        serde_json::from_str(&text)?
    };
    let (params, _) = ModelParams::load(&config.out.join(MODEL_FILE))?;
    let emb = load_embeddings(config)?;
    let index = load_index_artifact(config)?;

    let splits = split_corpus(
        notes.iter().map(|n| n.note_id.as_str()),
        config.seed,
        &config.split_ratios(),
    )?;
    let mut split_sizes: BTreeMap<String, usize> = BTreeMap::new();
    for split in splits.values() {
        let name = match split {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        };
        *split_sizes.entry(name.to_string()).or_insert(0) += 1;
    }

    let tokens_of = query_tokens_by_id(&queries);
    let note_of: BTreeMap<String, String> =
        queries.iter().map(|q| (q.query_id.clone(), q.note_id.clone())).collect();
    let in_split = |query_id: &str, wanted: Split| {
        note_of
            .get(query_id)
            .and_then(|n| splits.get(n))
            .map(|&s| s == wanted)
            .unwrap_or(false)
    };

    // Setup 1: relevant-node detection on the test split.
    let mut by_split: BTreeMap<&str, Vec<QueryGraph>> = BTreeMap::new();
    for graph in &labeled {
        let split = match note_of.get(&graph.query_id).and_then(|n| splits.get(n)) {
            Some(Split::Train) => "train",
            Some(Split::Dev) => "dev",
            Some(Split::Test) => "test",
            None => continue,
        };
        by_split.entry(split).or_default().push(QueryGraph {
            query_tokens: tokens_of[&graph.query_id].clone(),
            graph: graph.clone(),
        });
    }
    let empty = Vec::new();
    let test_labeled = by_split.get("test").unwrap_or(&empty);
    let node_detection = if test_labeled.is_empty() {
        None
    } else {
        Some(run_node_detection_eval(test_labeled, &params, &emb, params.tau)?)
    };

    // Setup 2: query-level comparison, all six variants, on the test split.
    let external_keywords = compute_external_keywords(
        &index.codes().iter().map(|c| c.description.clone()).collect::<Vec<_>>(),
        &corpus_vocabulary(&notes),
        config.top_k_external,
    );
    let graph_of: BTreeMap<String, &ContextualGraph> =
        graphs.iter().map(|g| (g.query_id.clone(), g)).collect();
    let test_queries: Vec<EvalQuery> = queries
        .iter()
        .filter(|q| in_split(&q.query_id, Split::Test))
        .map(|q| EvalQuery {
            query_id: q.query_id.clone(),
            text: q.text.clone(),
            graph: (*graph_of[&q.query_id]).clone(),
        })
        .collect();
    let test_gold: BTreeMap<String, String> = alignment
        .iter()
        .filter(|(query_id, _)| in_split(query_id, Split::Test))
        .map(|(q, c)| (q.clone(), c.clone()))
        .collect();
    let variants: Vec<(QueryVariant, bool)> = QueryVariant::ALL
        .iter()
        .flat_map(|&v| [(v, false), (v, true)])
        .collect();
    let query_comparison = run_query_comparison(
        &test_queries,
        &test_gold,
        Some(&params),
        &emb,
        &index,
        &external_keywords,
        &config.eval_ks,
        &variants,
    )?;

    // Setup 3: macro P/R/F1 with the retrieved top-cutoff as the predicted
    // label set, per variant.
    let gold_sets: BTreeMap<String, BTreeSet<String>> = test_gold
        .iter()
        .map(|(q, c)| (q.clone(), BTreeSet::from([c.clone()])))
        .collect();
    let mut retrieval_macro = Vec::new();
    for &(variant, with_external) in &variants {
        let mut predicted: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for query in &test_queries {
            let text = icdq_core::eval::variant_query_text(
                query,
                variant,
                with_external,
                Some(&params),
                &emb,
                &external_keywords,
            )?;
            let result = search(&index, &text, config.retrieval_cutoff);
            predicted.insert(query.query_id.clone(), result.top_codes(config.retrieval_cutoff));
        }
        let (precision, recall, f1) = macro_prf(&predicted, &gold_sets);
        let label = if with_external {
            format!("{}+external", variant.label())
        } else {
            variant.label().to_string()
        };
        retrieval_macro.push(MacroRow {
            variant: label,
            cutoff: config.retrieval_cutoff,
            precision,
            recall,
            f1,
        });
    }

    // Analysis: layer sweep, when configured.
    let layer_sweep = if config.layer_sweep.is_empty() {
        None
    } else {
        let train_l = by_split.get("train").unwrap_or(&empty);
        let dev_l = by_split.get("dev").unwrap_or(&empty);
        Some(run_layer_sweep(
            train_l,
            dev_l,
            test_labeled,
            &emb,
            &config.train_config(),
            &config.layer_sweep,
        )?)
    };

    let report = ExperimentReport {
        setup: "full-evaluation".into(),
        seed: config.seed,
        timestamp: None,
        config_echo: config.echo_json(),
        split_sizes,
        node_detection,
        query_comparison: Some(query_comparison),
        retrieval_macro: Some(retrieval_macro),
        layer_sweep,
    };
    write_json_pretty(&config.out.join(REPORT_JSON_FILE), &report)?;
    std::fs::write(config.out.join(REPORT_TEXT_FILE), report.render_text())?;

    manifest.record_stage(
        "evaluate",
        &hash,
        &config.out,
        &[REPORT_JSON_FILE, REPORT_TEXT_FILE],
    )?;
    manifest.save(&config.out)?;
    Ok(format!(
        "evaluated {} test queries across {} variants; report at {}",
        test_queries.len(),
        QueryVariant::ALL.len() * 2,
        config.out.join(REPORT_TEXT_FILE).display()
    ))
}
