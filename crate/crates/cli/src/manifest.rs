//! Per-stage `manifest.json`: stage name, tool version, resolved config and
//! sha256 of every input and output. No timestamps, so unchanged inputs
//! give byte-identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Output files whose content records wall-clock timing and therefore is
/// not hashed.
pub const VOLATILE: &[&str] = &["report.json"];

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub stage: &'static str,
    pub version: &'static str,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub unhashed: Vec<String>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_bytes(&bytes))
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::Runtime(format!("cannot list {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::Runtime(e.to_string()))?.path();
        if path.is_dir() {
            files_under(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

impl Manifest {
    pub fn new(stage: &'static str, config: &impl Serialize) -> Result<Self, CliError> {
        Ok(Manifest {
            stage,
            version: env!("CARGO_PKG_VERSION"),
            config: serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            unhashed: Vec::new(),
        })
    }

    pub fn input_file(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        let h = sha256_file(path)?;
        self.inputs.insert(name.to_string(), h);
        Ok(())
    }

    pub fn input_value(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let bytes = serde_json::to_vec(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.inputs.insert(name.to_string(), sha256_bytes(&bytes));
        Ok(())
    }

    /// Hashes every file under `dir` except the manifest and volatile files,
    /// then writes `dir/manifest.json`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf, CliError> {
        let mut files = Vec::new();
        files_under(dir, &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(dir).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            if rel == "manifest.json" {
                continue;
            }
            if VOLATILE.contains(&rel.as_str()) {
                self.unhashed.push(rel);
                continue;
            }
            self.outputs.insert(rel, sha256_file(&f)?);
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
