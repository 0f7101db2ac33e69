//! Broker configuration file (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sky_core::jobspec::ObjectiveMode;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerConfig {
    pub catalog: Option<PathBuf>,
    pub objective: Option<String>,
    pub exact_bound: Option<u64>,
    pub max_waypoints: Option<usize>,
    pub max_replans: Option<usize>,
    pub fee_percent: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub credentials: BTreeMap<String, String>,
}

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Invalid(String),
}

impl BrokerConfig {
    pub fn load(path: &Path) -> Result<BrokerConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let config: BrokerConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
        config
            .check()
            .map_err(|m| ConfigError::Invalid(format!("{}: {m}", path.display())))?;
        Ok(config)
    }

    fn check(&self) -> Result<(), String> {
        if self.exact_bound == Some(0) {
            return Err("exact_bound must be positive".into());
        }
        if let Some(f) = self.fee_percent {
            if !f.is_finite() || f < 0.0 {
                return Err(format!("fee_percent must be a non-negative number, got {f}"));
            }
        }
        self.objective_mode().map(|_| ())
    }

    pub fn objective_mode(&self) -> Result<Option<ObjectiveMode>, String> {
        self.objective.as_deref().map(str::parse).transpose()
    }
}
