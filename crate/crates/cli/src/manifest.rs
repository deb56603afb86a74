//! Per-stage artifact manifest: which files each stage wrote, their content
//! hashes, and the config hash the stage ran under. Later stages refuse to
//! consume artifacts built from a different config.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// File name -> SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Record a completed stage and the hashes of the files it wrote.
    pub fn record_stage(
        &mut self,
        stage: &str,
        config_hash: &str,
        out_dir: &Path,
        files: &[&str],
    ) -> Result<()> {
        let mut hashes = BTreeMap::new();
        for name in files {
            let bytes = std::fs::read(out_dir.join(name))
                .with_context(|| format!("hashing artifact {name}"))?;
            hashes.insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
        }
        self.stages.insert(
            stage.to_string(),
            StageRecord { config_hash: config_hash.to_string(), files: hashes },
        );
        Ok(())
    }

    /// Fail unless `stage` ran under exactly this config.
    pub fn require_stage(&self, stage: &str, config_hash: &str) -> Result<()> {
        match self.stages.get(stage) {
            None => bail!("stage `{stage}` has not been run; run it first"),
            Some(record) if record.config_hash != config_hash => bail!(
                "stale artifacts: stage `{stage}` was built from config {} but the current config is {}; rerun it",
                &record.config_hash[..12.min(record.config_hash.len())],
                &config_hash[..12.min(config_hash.len())],
            ),
            Some(_) => Ok(()),
        }
    }
}
