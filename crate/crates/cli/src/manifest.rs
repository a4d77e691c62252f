use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    /// Contains wall-clock measurements, so the hash differs between runs.
    #[serde(default)]
    pub volatile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_paths: Vec<String>,
    pub seed: Option<u64>,
    pub artifacts: Vec<Artifact>,
    pub wall_seconds: f64,
    #[serde(default)]
    pub details: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects artifacts as a command writes them.
pub struct ManifestBuilder {
    command: &'static str,
    out: PathBuf,
    started: Instant,
    config_paths: Vec<String>,
    seed: Option<u64>,
    artifacts: Vec<(PathBuf, bool)>,
    details: serde_json::Value,
}

impl ManifestBuilder {
    pub fn new(command: &'static str, out: &Path, config: Option<&Path>, seed: Option<u64>) -> Self {
        Self {
            command,
            out: out.to_path_buf(),
            started: Instant::now(),
            config_paths: config.map(|p| p.display().to_string()).into_iter().collect(),
            seed,
            artifacts: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn config_path(&mut self, path: &Path) {
        self.config_paths.push(path.display().to_string());
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push((path.into(), false));
    }

    pub fn volatile(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push((path.into(), true));
    }

    pub fn details(&mut self, details: serde_json::Value) {
        self.details = details;
    }

    pub fn finish(self) -> Result<RunManifest> {
        let artifacts = self
            .artifacts
            .iter()
            .map(|(p, volatile)| {
                let rel = p.strip_prefix(&self.out).unwrap_or(p);
                Ok(Artifact {
                    path: rel.display().to_string(),
                    sha256: sha256_file(p)?,
                    volatile: *volatile,
                })
            })
            .collect::<Result<_>>()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_paths: self.config_paths,
            seed: self.seed,
            artifacts,
            wall_seconds: self.started.elapsed().as_secs_f64(),
            details: self.details,
        };
        let path = self.out.join(RUN_MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}
