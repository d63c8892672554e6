use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unfold_core::harness::ExperimentConfig;

/// Record of one CLI invocation, written as `manifest.json` next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_name: String,
    /// SHA-256 of the canonical re-serialized config, not of the file bytes.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub stages: Vec<StageDuration>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageDuration {
    pub stage: String,
    pub seconds: f64,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(config.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn start(command: &str, config: &ExperimentConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            config_name: config.name.clone(),
            config_hash: config_hash(config),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
            finished_unix: 0.0,
            stages: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn stage(&mut self, stage: &str, seconds: f64) {
        self.stages.push(StageDuration {
            stage: stage.to_string(),
            seconds,
        });
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Checks that every listed output exists and is non-empty, then writes
    /// the manifest itself to `path`.
    pub fn finish(mut self, path: &Path) -> Result<PathBuf> {
        for out in &self.outputs {
            let meta = std::fs::metadata(out).with_context(|| format!("missing output {out}"))?;
            if meta.len() == 0 {
                bail!("output {out} is empty");
            }
        }
        self.finished_unix = now();
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path.to_path_buf())
    }
}
