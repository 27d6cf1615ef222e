use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "manifest.json";

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub params: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub output_paths: Vec<PathBuf>,
    /// Milliseconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
    pub version: String,
    /// Statistics that could not be computed, with the reason.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(subcommand: &str, seed: Option<u64>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            params: BTreeMap::new(),
            seed,
            output_paths: Vec::new(),
            started: unix_ms(),
            finished: 0,
            version: env!("CARGO_PKG_VERSION").to_string(),
            notes: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn finish(mut self, dir: &Path) -> anyhow::Result<PathBuf> {
        self.finished = unix_ms();
        let path = dir.join(FILE_NAME);
        std::fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(path)
    }
}
