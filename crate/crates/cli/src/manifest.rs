use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use fmg_spo::io::{fingerprint, write_atomic};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Grouping key for `report`, e.g. the model kind or search mode.
    pub label: String,
    pub config_fingerprint: String,
    /// Content hash of the dataset read or written, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_fingerprint: Option<String>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub metrics: BTreeMap<String, f64>,
    /// Fully resolved configuration, after flag overrides.
    pub config: toml::Table,
}

pub fn now_unix_s() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, label: impl Into<String>, config: &C, started_unix_s: u64) -> Result<Self> {
        let text = toml::to_string(config).context("serializing resolved config")?;
        let config: toml::Table = toml::from_str(&text)?;
        Ok(Self {
            command: command.into(),
            label: label.into(),
            config_fingerprint: fingerprint(text.as_bytes()),
            data_fingerprint: None,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_s,
            finished_unix_s: started_unix_s,
            metrics: BTreeMap::new(),
            config,
        })
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix_s = now_unix_s();
        let path = dir.join(MANIFEST_FILE);
        write_atomic(&path, toml::to_string(&self)?.as_bytes())?;
        Ok(path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("no manifest at {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("malformed manifest {}", path.display()))
    }
}
