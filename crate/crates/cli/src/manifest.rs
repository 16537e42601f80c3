//! Run manifests: every command records its resolved-config hash, input
//! digests, seeds, and key outcomes so a run can be audited and reproduced.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn digest_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(command: &str, config_sha256: String, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_sha256,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, label: &str, path: &Path) -> Result<()> {
        self.inputs
            .insert(format!("{label}:{}", path.display()), digest_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.notes.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
        );
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }
}
