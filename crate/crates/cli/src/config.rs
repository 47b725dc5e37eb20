//! JSON configuration accepted by `--config`.
//!
//! Values are layered: built-in defaults, then the config file, then any flag
//! given explicitly on the command line. A run manifest is also accepted; its
//! recorded `config` block is used.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use sap_core::pipeline::PipelineConfig;
use sap_core::pseudo_anomaly::GenConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    /// Generator settings; the band range defaults to the input's band count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenConfig>,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut value: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if value.get("subcommand").is_some() {
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
        }
        serde_json::from_value(value).with_context(|| format!("config {}", path.display()))
    }
}
