//! Run manifests: every command records its inputs, seed, version, and
//! the SHA-256 of every file it wrote.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use xbar_prune::error::{Error, Result};

#[derive(Serialize)]
struct OutputEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    version: &'a str,
    seed: u64,
    config_paths: Vec<String>,
    started_at: String,
    finished_at: String,
    outputs: Vec<OutputEntry>,
}

pub struct ManifestBuilder {
    command: &'static str,
    seed: u64,
    config_paths: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started_at: chrono::DateTime<chrono::Utc>,
}

impl ManifestBuilder {
    pub fn new(command: &'static str, seed: u64) -> Self {
        ManifestBuilder {
            command,
            seed,
            config_paths: Vec::new(),
            outputs: Vec::new(),
            started_at: chrono::Utc::now(),
        }
    }

    pub fn config(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.config_paths.push(path.into());
        self
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push(path.into());
        self
    }

    /// Hash the outputs and write `manifest.json` next to them.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for p in &self.outputs {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            let mut hasher = Sha256::new();
            hasher.update(&bytes);
            let digest = hasher.finalize();
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            outputs.push(OutputEntry {
                path: p.display().to_string(),
                sha256: hex,
            });
        }
        let manifest = Manifest {
            command: self.command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config_paths: self
                .config_paths
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            started_at: self.started_at.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
