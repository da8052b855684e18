//! Artifact manifest: content hashes, producing command, config hash and
//! inputs for every file a run writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::formats::{read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub sha256: String,
    pub bytes: u64,
    pub command: String,
    pub config_hash: String,
    /// Paths (relative to the run directory) this artifact was derived from.
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub artifacts: BTreeMap<String, Entry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            tool: "tracelens".into(),
            tool_version: TOOL_VERSION.into(),
            artifacts: BTreeMap::new(),
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Forward-slash relative key for a path inside `root`.
pub fn rel_key(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

impl Manifest {
    pub fn load_or_default(root: &Path) -> Result<Self> {
        let p = root.join(MANIFEST_FILE);
        if p.exists() {
            read_json(&p)
        } else {
            Ok(Manifest::default())
        }
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        write_json(&root.join(MANIFEST_FILE), self)
    }

    /// Checks that an input file exists and, when the manifest knows it,
    /// that its content still has the recorded hash and that it was written
    /// under `config_hash`. Unknown files are registered as external inputs.
    pub fn verify_input(&mut self, root: &Path, path: &Path, config_hash: &str) -> Result<String> {
        if !path.exists() {
            return Err(CliError::MissingArtifact(path.to_path_buf()));
        }
        let key = rel_key(root, path);
        let (sha, bytes) = sha256_file(path)?;
        match self.artifacts.get(&key) {
            Some(e) if e.sha256 != sha => Err(CliError::Fingerprint {
                what: format!("sha256 of {key}"),
                expected: e.sha256.clone(),
                found: sha,
            }),
            Some(e) if e.command != "external" && e.config_hash != config_hash => Err(CliError::Fingerprint {
                what: format!("config_hash of {key}"),
                expected: config_hash.into(),
                found: e.config_hash.clone(),
            }),
            Some(_) => Ok(key),
            None => {
                self.artifacts.insert(
                    key.clone(),
                    Entry {
                        sha256: sha,
                        bytes,
                        command: "external".into(),
                        config_hash: String::new(),
                        inputs: Vec::new(),
                    },
                );
                Ok(key)
            }
        }
    }

    pub fn record(&mut self, root: &Path, path: &Path, command: &str, config_hash: &str, inputs: &[String]) -> Result<()> {
        let (sha256, bytes) = sha256_file(path)?;
        let key = rel_key(root, path);
        let mut inputs: Vec<String> = inputs.iter().filter(|i| **i != key).cloned().collect();
        inputs.sort();
        inputs.dedup();
        self.artifacts.insert(
            key,
            Entry {
                sha256,
                bytes,
                command: command.into(),
                config_hash: config_hash.into(),
                inputs,
            },
        );
        Ok(())
    }

    /// Every listed input must itself be an entry.
    pub fn check_complete(&self) -> Result<()> {
        for (k, e) in &self.artifacts {
            if let Some(missing) = e.inputs.iter().find(|i| !self.artifacts.contains_key(*i)) {
                return Err(CliError::MissingArtifact(PathBuf::from(format!("{missing} (input of {k})"))));
            }
        }
        Ok(())
    }

    /// `path -> sha256` view used to compare runs.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.artifacts.iter().map(|(k, e)| (k.clone(), e.sha256.clone())).collect()
    }
}
