//! Model configuration documents.
//!
//! ```toml
//! modes = 1
//! coeffs = [3.141592653589793]
//! sigma = 1.0
//! ```
//!
//! `coeffs[j-1]` weighs frequency `j` against the normalized eigenfunctions
//! `cos(jx)/sqrt(pi)`, `sin(jx)/sqrt(pi)`, so `V(x, y) = cos(y - x)` is
//! `coeffs = [pi]`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CircleModel, ModelError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("modes = {modes} but {coeffs} coefficients given")]
    ModeCount { modes: usize, coeffs: usize },
    #[error("unknown preset {0:?} (available: motivating)")]
    UnknownPreset(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub modes: usize,
    pub coeffs: Vec<f64>,
    pub sigma: f64,
}

impl ModelConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.build()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "motivating" => Ok(Self { modes: 1, coeffs: vec![std::f64::consts::PI], sigma: 1.0 }),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn build(&self) -> Result<CircleModel, ConfigError> {
        if self.modes != self.coeffs.len() {
            return Err(ConfigError::ModeCount { modes: self.modes, coeffs: self.coeffs.len() });
        }
        Ok(CircleModel::new(self.coeffs.clone(), self.sigma)?)
    }
}
