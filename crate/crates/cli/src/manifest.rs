//! Run manifests: a small JSON record written next to every command's
//! outputs so an experiment directory is self-describing. Digests are of
//! raw file bytes; the manifest itself is written atomically (temp file +
//! rename) so a crashed run never leaves a half-written manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
            seed,
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: String::new(),
            outputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)
            .with_context(|| format!("reading input {} for digest", path.display()))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.insert(path.display().to_string(), hex);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Finalize the timestamp and write `<base>.manifest.json` atomically.
    pub fn write_next_to(&mut self, base: &Path) -> Result<PathBuf> {
        self.finished_at = chrono::Utc::now().to_rfc3339();
        let path = manifest_path(base);
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_string_pretty(self)?;
        fs::write(&tmp, body.as_bytes())
            .with_context(|| format!("writing manifest {}", tmp.display()))?;
        fs::rename(&tmp, &path)
            .with_context(|| format!("renaming manifest into place at {}", path.display()))?;
        Ok(path)
    }
}

pub fn manifest_path(base: &Path) -> PathBuf {
    let mut name = base
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    name.push_str(".manifest.json");
    base.with_file_name(name)
}
