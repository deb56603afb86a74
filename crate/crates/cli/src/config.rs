//! Pipeline configuration: one flat key = value file (TOML syntax) naming
//! every tunable with its default. The SHA-256 of the effective config is
//! embedded in every artifact so stale intermediates are caught.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use icdq_core::corpus::ExtractionRules;
use icdq_core::eval::SplitRatios;
use icdq_core::ir::IcdVersion;
use icdq_core::model::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    // Inputs and outputs.
    pub corpus: PathBuf,
    pub kb: PathBuf,
    pub icd: PathBuf,
    /// Plain-text embedding file; empty means deterministic random vectors.
    pub embeddings: PathBuf,
    pub out: PathBuf,
    pub icd_version: IcdVersion,

    // Query extraction.
    pub diagnosis_sections: Vec<String>,

    // Graph construction.
    pub max_hops: usize,
    pub top_k_external: usize,
    /// KB relation allow-list; empty keeps every relation.
    pub kb_relations: Vec<String>,

    // Distant supervision.
    pub label_threshold: f64,

    // Model.
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub gnn_layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_lambda: f64,
    /// 0 means automatic: the negative/positive label ratio.
    pub pos_weight: f64,
    pub tau: f64,

    // Splits and evaluation.
    pub seed: u64,
    pub split_train: f64,
    pub split_dev: f64,
    pub split_test: f64,
    pub eval_ks: Vec<usize>,
    /// Top-N retrieved codes counted as the predicted label set for the
    /// macro metrics.
    pub retrieval_cutoff: usize,
    /// Layer counts to sweep during evaluate; empty skips the sweep.
    pub layer_sweep: Vec<usize>,
    pub predict_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.jsonl"),
            kb: PathBuf::from("kb.jsonl"),
            icd: PathBuf::from("icd.tsv"),
            embeddings: PathBuf::new(),
            out: PathBuf::from("out"),
            icd_version: IcdVersion::Icd10,
            diagnosis_sections: vec!["DIAGNOSIS".into(), "IMPRESSION".into()],
            max_hops: 3,
            top_k_external: 4,
            kb_relations: vec![],
            label_threshold: 0.15,
            embedding_dim: 50,
            hidden_dim: 64,
            gnn_layers: 3,
            learning_rate: 1e-3,
            epochs: 100,
            l2_lambda: 1e-4,
            pos_weight: 0.0,
            tau: 0.5,
            seed: 42,
            split_train: 0.70,
            split_dev: 0.15,
            split_test: 0.15,
            eval_ks: vec![1, 8, 15],
            retrieval_cutoff: 1,
            layer_sweep: vec![],
            predict_k: 15,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Check ranges and that every referenced input path exists.
    pub fn validate(&self) -> Result<()> {
        for (name, path) in [("corpus", &self.corpus), ("kb", &self.kb), ("icd", &self.icd)] {
            if !path.exists() {
                bail!("config `{name}` path does not exist: {}", path.display());
            }
        }
        if !self.embeddings.as_os_str().is_empty() && !self.embeddings.exists() {
            bail!("config `embeddings` path does not exist: {}", self.embeddings.display());
        }
        if self.max_hops == 0 {
            bail!("max_hops must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.label_threshold) {
            bail!("label_threshold must lie in [0, 1]");
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            bail!("eval_ks must be non-empty positive integers");
        }
        if self.retrieval_cutoff == 0 || self.predict_k == 0 {
            bail!("retrieval_cutoff and predict_k must be >= 1");
        }
        self.split_ratios().validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn extraction_rules(&self) -> ExtractionRules {
        ExtractionRules { diagnosis_sections: self.diagnosis_sections.clone() }
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios { train: self.split_train, dev: self.split_dev, test: self.split_test }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            embedding_dim: self.embedding_dim,
            hidden_dim: self.hidden_dim,
            gnn_layers: self.gnn_layers,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            l2_lambda: self.l2_lambda,
            pos_weight: (self.pos_weight > 0.0).then_some(self.pos_weight),
            seed: self.seed,
            tau: self.tau,
            init: Default::default(),
        }
    }

    pub fn kb_relation_allowlist(&self) -> Option<&[String]> {
        if self.kb_relations.is_empty() {
            None
        } else {
            Some(&self.kb_relations)
        }
    }

    /// The config as it participates in artifact identity. The output
    /// directory is excluded: where artifacts land never changes their
    /// content, and reports must be byte-identical across output locations.
    fn identity(&self) -> PipelineConfig {
        PipelineConfig { out: PathBuf::new(), ..self.clone() }
    }

    /// SHA-256 over the canonical JSON serialization of the effective
    /// config (CLI overrides applied, output directory excluded).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&self.identity()).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn echo_json(&self) -> serde_json::Value {
        serde_json::to_value(self.identity()).expect("config serializes")
    }
}
