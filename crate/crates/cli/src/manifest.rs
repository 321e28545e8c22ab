//! Per-run provenance manifest. Everything except the `timings` block is a
//! pure function of the config and inputs, so reruns are byte-comparable
//! after dropping that one field.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::Digest;

use crate::config::RunConfig;

#[derive(Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub summary: BTreeMap<String, String>,
    /// Wall-clock timings in milliseconds; excluded from reproducibility
    /// comparisons.
    pub timings: BTreeMap<String, u128>,
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> Self {
        let canonical = serde_json::to_vec(config).expect("config serializes");
        let hash = sha2::Sha256::digest(&canonical);
        Self {
            tool: "semflow".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            config_hash: format!("{hash:x}"),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            summary: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serializable"))
    }
}
