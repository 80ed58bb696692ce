//! Run manifest: which stages ran, from which inputs, producing which files.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cotrain::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Hash of the config and every input artifact of the stage.
    pub digest: String,
    /// Paths relative to the output directory.
    pub artifacts: Vec<PathBuf>,
    pub started: u64,
    pub finished: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub code_version: String,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digest of a stage: its name, the config digest and its input files.
pub fn stage_digest(config_digest: &str, name: &str, inputs: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(config_digest.as_bytes());
    h.update([0]);
    h.update(name.as_bytes());
    for p in inputs {
        h.update([0]);
        h.update(file_digest(p)?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

impl RunManifest {
    pub fn new(config_digest: &str) -> Self {
        Self {
            config_digest: config_digest.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            stages: Vec::new(),
        }
    }

    /// Load the manifest in `dir`, or start a new one. A manifest written
    /// for another config is discarded.
    pub fn open(dir: &Path, config_digest: &str) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        if !path.exists() {
            return Ok(Self::new(config_digest));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m = Self::parse(&text).map_err(|e| Error::data_file(&path, e.to_string()))?;
        Ok(if m.config_digest == config_digest {
            m
        } else {
            Self::new(config_digest)
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::data(e.to_string()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Up to date when recorded with the same digest and every artifact
    /// still exists.
    pub fn is_current(&self, dir: &Path, name: &str, digest: &str) -> bool {
        self.stage(name)
            .is_some_and(|s| s.digest == digest && s.artifacts.iter().all(|a| dir.join(a).exists()))
    }

    pub fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|s| s.name != rec.name);
        self.stages.push(rec);
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &PathBuf> {
        self.stages.iter().flat_map(|s| s.artifacts.iter())
    }
}
