use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub summary: BTreeMap<String, String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started: now(),
            finished: String::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            config: BTreeMap::new(),
            summary: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, key: &str, path: impl AsRef<Path>) {
        self.inputs.insert(key.to_string(), path.as_ref().display().to_string());
    }

    pub fn output(&mut self, out_dir: &Path, path: &Path) {
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        self.outputs.push(rel.display().to_string());
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.insert(key.to_string(), value.to_string());
    }

    pub fn write(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.finished = now();
        let path = out_dir.join("manifest.toml");
        let text = toml::to_string(&self).context("serializing manifest")?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
