use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::Provenance;
use crate::error::Result;
use crate::hash::fnv_hex;

/// Everything needed to rerun a command and check its outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Input role → path.
    pub inputs: BTreeMap<String, String>,
    pub dataset_tags: BTreeMap<String, String>,
    pub provenance: Option<Provenance>,
    /// Output file name → content hash.
    pub outputs: BTreeMap<String, String>,
}

/// Hash of the canonical JSON text of `value`.
pub fn config_hash(value: &serde_json::Value) -> String {
    fnv_hex(value.to_string().as_bytes())
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(&config),
            config,
            ..Default::default()
        }
    }

    /// Records the content hash of an emitted file under its file name.
    pub fn record_output(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.outputs.insert(name, fnv_hex(&bytes));
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
