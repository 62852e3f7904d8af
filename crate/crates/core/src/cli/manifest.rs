//! Per-run manifest: config hash, input hash and the artifacts written.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{OplError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| OplError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub input_sha256: Option<String>,
    /// Artifact file name to content hash.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config_sha256: String, input: Option<&Path>) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            config_sha256,
            input_sha256: input.map(file_sha256).transpose()?,
            artifacts: BTreeMap::new(),
        })
    }

    /// Records an artifact already written to `dir`.
    pub fn add(&mut self, dir: &Path, name: &str) -> Result<()> {
        let h = file_sha256(&dir.join(name))?;
        self.artifacts.insert(name.to_string(), h);
        Ok(())
    }

    pub fn file_name(command: &str) -> String {
        format!("manifest-{command}.json")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(Self::file_name(&self.command));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| OplError::io(&path, e))
    }
}
