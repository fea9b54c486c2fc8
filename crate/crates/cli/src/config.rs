use std::fs;
use std::path::Path;

use gnnpcg::bench::BenchOptions;
use gnnpcg::fem::DatasetConfig;
use gnnpcg::gnn::GnnHyper;
use gnnpcg::train::TrainConfig;
use gnnpcg::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Contents of a `--config` file. Every section is optional; commands
/// report which one they are missing.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub model: Option<GnnHyper>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub bench: Option<BenchOptions>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSection {
    /// Parameter shifts in training standard deviations.
    pub shifts: Vec<f64>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not JSON: {e}")))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(Error::Config(format!("config schema_version {v}, expected {SCHEMA_VERSION}"))),
            None => return Err(Error::Config("config lacks schema_version".into())),
        }
        serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn dataset(&self) -> Result<DatasetConfig> {
        self.dataset.clone().ok_or_else(|| Error::Config("config has no dataset section".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_required_and_checked() {
        assert!(Config::parse("{}").is_err());
        assert!(Config::parse(r#"{"schema_version": 2}"#).is_err());
        let c = Config::parse(r#"{"schema_version": 1}"#).unwrap();
        assert!(c.dataset.is_none());
        assert!(c.dataset().is_err());
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(Config::parse(r#"{"schema_version": 1, "datset": {}}"#).is_err());
    }
}
