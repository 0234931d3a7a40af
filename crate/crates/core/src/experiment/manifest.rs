//! Run manifests: the provenance record written next to every output set.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Path relative to the output directory, or as given for inputs.
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, label: String) -> Result<Self> {
        Ok(Self { path: label, sha256: hex::encode(Sha256::digest(fs::read(path)?)) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    /// Master seed followed by every derived seed the run used.
    pub seeds: Vec<u64>,
    pub started: String,
    pub finished: String,
    pub workers: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Resolved configuration.
    pub config: ExperimentConfig,
}

pub fn now() -> String {
    OffsetDateTime::now_utc().format(&Rfc3339).unwrap_or_else(|_| "unknown".into())
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_slice(&fs::read(path)?)?;
        if m.config.hash()? != m.config_hash {
            return Err(Error::Config("manifest configuration does not match its hash".into()));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Re-hashes the outputs in `dir`; returns the files whose digest differs.
    pub fn verify_outputs(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for o in &self.outputs {
            let d = FileDigest::of(&dir.join(&o.path), o.path.clone())?;
            if d.sha256 != o.sha256 {
                bad.push(o.path.clone());
            }
        }
        Ok(bad)
    }
}
