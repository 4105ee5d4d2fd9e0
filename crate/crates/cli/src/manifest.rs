//! Run manifest: which stages completed, from which inputs, producing which
//! files. Every output is content-hashed so a record can be re-verified.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use repspace_core::feature_store::write_atomic;
use repspace_core::seed::sha256_hex;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs_hash: String,
    pub outputs_hash: String,
    /// Paths relative to the run directory, sorted.
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: Option<String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: None,
            stages: BTreeMap::new(),
        }
    }
}

impl RunManifest {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join(MANIFEST_FILE)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = Self::path(run_dir);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&Self::path(run_dir), text.as_bytes())?;
        Ok(())
    }

    /// The record for `stage` if every listed output still hashes to what was
    /// recorded.
    pub fn verified(&self, run_dir: &Path, stage: &str) -> Option<&StageRecord> {
        let rec = self.stages.get(stage)?;
        match outputs_hash(run_dir, &rec.outputs) {
            Ok(h) if h == rec.outputs_hash => Some(rec),
            _ => None,
        }
    }
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Hash over `(relative path, content hash)` for each output, in the given
/// (sorted) order.
pub fn outputs_hash(run_dir: &Path, outputs: &[String]) -> Result<String> {
    let mut acc = String::new();
    for rel in outputs {
        acc.push_str(rel);
        acc.push('\0');
        acc.push_str(&file_hash(&run_dir.join(rel))?);
        acc.push('\n');
    }
    Ok(sha256_hex(acc.as_bytes()))
}

/// Combine labelled parts into one hash.
pub fn combine(parts: &[(&str, &str)]) -> String {
    let mut acc = String::new();
    for (k, v) in parts {
        acc.push_str(k);
        acc.push('=');
        acc.push_str(v);
        acc.push('\n');
    }
    sha256_hex(acc.as_bytes())
}
