//! Flat JSON run configuration. Unset keys take the documented defaults;
//! unknown keys and out-of-range values are rejected with the offending
//! key named.

use crate::model::{ContrastMode, ViewKind, ViewMode};
use crate::sampling::SamplingMode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config key '{key}': {detail}")]
    Range { key: &'static str, detail: String },
}

/// Declared meta-path override (replaces the dataset manifest's list).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPathSpec {
    pub name: String,
    pub relations: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub dim: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub tau: f64,
    pub theta: f64,
    pub k_struct: usize,
    pub k_attr: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda6: f64,
    pub mu: f64,
    pub mask_rate: f64,
    /// Per-type neighbor budgets for the low-order view; types not listed
    /// use `neighbors_default`.
    pub neighbors_per_type: BTreeMap<String, usize>,
    pub neighbors_default: usize,
    pub dropout: f64,
    /// Overrides the dataset manifest's meta-path list when set.
    pub metapaths: Option<Vec<MetaPathSpec>>,
    pub export_view: ViewKind,
    pub sampling_mode: SamplingMode,
    pub view_mode: ViewMode,
    pub contrast_mode: ContrastMode,
    pub fs_layers: usize,
    pub fs_normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 64,
            learning_rate: 1e-3,
            max_epochs: 400,
            patience: 30,
            tau: 0.5,
            theta: 0.3,
            k_struct: 5,
            k_attr: 5,
            lambda1: 1.0 / 3.0,
            lambda2: 1.0 / 3.0,
            lambda3: 1.0 / 3.0,
            lambda4: 1.0 / 6.0,
            lambda5: 1.0 / 6.0,
            lambda6: 1.0 / 6.0,
            mu: 0.5,
            mask_rate: 0.1,
            neighbors_per_type: BTreeMap::new(),
            neighbors_default: crate::views::DEFAULT_NEIGHBORS,
            dropout: 0.3,
            metapaths: None,
            export_view: ViewKind::Ho,
            sampling_mode: SamplingMode::Both,
            view_mode: ViewMode::All,
            contrast_mode: ContrastMode::LocalGlobal,
            fs_layers: 1,
            fs_normalize: false,
        }
    }
}

impl TrainConfig {
    /// Enforces the documented hyperparameter ranges. These are the
    /// search bounds a run configuration must respect; library callers
    /// building configs programmatically (e.g. a zero-learning-rate probe
    /// in a test) bypass this by constructing the struct directly.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn range(
            key: &'static str,
            value: f64,
            lo: f64,
            hi: f64,
        ) -> Result<(), ConfigError> {
            if !value.is_finite() || value < lo || value > hi {
                return Err(ConfigError::Range {
                    key,
                    detail: format!("{value} outside [{lo}, {hi}]"),
                });
            }
            Ok(())
        }
        if self.tau <= 0.0 {
            return Err(ConfigError::Range {
                key: "tau",
                detail: format!("{} must be positive", self.tau),
            });
        }
        range("tau", self.tau, 0.3, 0.9)?;
        range("learning_rate", self.learning_rate, 5e-4, 5e-3)?;
        range("dropout", self.dropout, 0.2, 0.5)?;
        range("patience", self.patience as f64, 5.0, 50.0)?;
        range("theta", self.theta, -1.0, 1.0)?;
        range("mu", self.mu, 0.0, 1.0)?;
        range("mask_rate", self.mask_rate, 0.0, 1.0)?;
        for (key, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
            ("lambda6", self.lambda6),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ConfigError::Range {
                    key: match key {
                        "lambda1" => "lambda1",
                        "lambda2" => "lambda2",
                        "lambda3" => "lambda3",
                        "lambda4" => "lambda4",
                        "lambda5" => "lambda5",
                        _ => "lambda6",
                    },
                    detail: format!("{v} must be non-negative"),
                });
            }
        }
        if self.dim == 0 {
            return Err(ConfigError::Range {
                key: "dim",
                detail: "embedding dimension must be positive".into(),
            });
        }
        if self.max_epochs == 0 {
            return Err(ConfigError::Range {
                key: "max_epochs",
                detail: "need at least one epoch".into(),
            });
        }
        if !(1..=4).contains(&self.fs_layers) {
            return Err(ConfigError::Range {
                key: "fs_layers",
                detail: format!("{} outside [1, 4]", self.fs_layers),
            });
        }
        if self.neighbors_default == 0 || self.neighbors_per_type.values().any(|&m| m == 0) {
            return Err(ConfigError::Range {
                key: "neighbors_per_type",
                detail: "neighbor budgets must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn lambda_local(&self) -> [f64; 3] {
        [self.lambda1, self.lambda2, self.lambda3]
    }

    pub fn lambda_global(&self) -> [f64; 3] {
        [self.lambda4, self.lambda5, self.lambda6]
    }

    /// SHA-256 over the canonical JSON encoding; identifies a resolved
    /// configuration in checkpoints, manifests and exports.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads a config file; an empty (or whitespace-only) file yields the full
/// default configuration.
pub fn parse_config(path: &Path) -> Result<TrainConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<TrainConfig, ConfigError> {
    let body = if text.trim().is_empty() { "{}" } else { text };
    let cfg: TrainConfig =
        serde_json::from_str(body).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
