use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

/// Provenance record written next to every command's outputs. It holds no
/// timestamps, so identical runs produce identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub threads: usize,
    /// Input path to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Output path to SHA-256, computed when the manifest is written.
    pub outputs: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    /// Fully resolved configuration of the command.
    pub config: toml::Value,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, threads: usize, config: &C) -> Result<Self> {
        let config = toml::Value::try_from(config).map_err(|e| Error::Config(format!("config encoding: {e}")))?;
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            warnings: Vec::new(),
            config,
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.insert(path.display().to_string(), String::new());
    }

    /// Hashes every registered output, failing if one is missing, then
    /// writes `manifest.toml` into `dir`.
    pub fn write(mut self, dir: &Path) -> Result<()> {
        for (path, hash) in self.outputs.iter_mut() {
            *hash = file_sha256(Path::new(path))?;
        }
        let text = toml::to_string(&self).map_err(|e| Error::Config(format!("manifest encoding: {e}")))?;
        let path = dir.join("manifest.toml");
        std::fs::write(&path, text).at(&path)?;
        Ok(())
    }
}
