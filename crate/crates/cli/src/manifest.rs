//! Machine-readable record written into every output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use deltarig_core::{Error, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: RunConfig,
    /// Input files with their SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output files, relative to the output directory, with their SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub summary: Value,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: "deltarig",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            summary: Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    /// Hashes the listed files of `out` and writes the manifest beside them.
    pub fn write(mut self, out: &Path, files: &[&str]) -> Result<PathBuf> {
        for f in files {
            self.outputs.insert((*f).to_string(), hash_file(&out.join(f))?);
        }
        let path = out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(&path, text + "\n").map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}
