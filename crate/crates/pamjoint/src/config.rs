//! Configuration file loading: a flat `key = value` format with section
//! headers (TOML subset), SI units, unknown keys rejected. Every section
//! is optional and falls back to the built-in defaults.

use serde::{Deserialize, Serialize};

use crate::control::ControllerConfig;
use crate::error::{Error, Result};
use crate::harness::ScenarioConfig;
use crate::plant::{NoiseSpec, PlantConfig};
use crate::statics::ModelParameters;
use crate::ukf::UkfConfig;

/// Full run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelParameters,
    pub plant: PlantConfig,
    pub ukf: UkfConfig,
    pub controller: ControllerConfig,
    pub noise: NoiseSpec,
    pub scenario: ScenarioConfig,
}

impl Config {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.ukf.validate()?;
        self.scenario.validate()?;
        Ok(())
    }

    /// Loads only the `[model]` section from a parameter file, leaving the
    /// rest at defaults.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
