use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Run record written before any computation starts: the resolved command,
/// seeds, configuration, and expected artifacts, enough to replay the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    pub created_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolved_config: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol_hash: Option<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seed: None,
            resolved_config: None,
            protocol_hash: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_config(mut self, value: serde_json::Value) -> Self {
        self.resolved_config = Some(value);
        self
    }

    pub fn with_protocol_hash(mut self, hash: impl Into<String>) -> Self {
        self.protocol_hash = Some(hash.into());
        self
    }

    pub fn with_io(mut self, inputs: Vec<String>, outputs: Vec<String>) -> Self {
        self.inputs = inputs;
        self.outputs = outputs;
        self
    }

    /// Writes `manifest.json` into the output directory.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
