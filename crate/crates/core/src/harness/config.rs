//! Experiment configuration (TOML) and validation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fl_core::{DatasetSpec, Method, PartitionScheme, TrainConfig};
use crate::ledger::{AffineGas, GasSchedule, FUNCTIONS};

/// The runnable default shipped with the crate.
pub const DEFAULT_CONFIG: &str = include_str!("../../configs/default.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    #[default]
    Sequential,
    Threaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSpec {
    pub node: usize,
    pub round: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Flip a byte of the collaborator's stored upload after it committed.
    CorruptUpload,
    /// Commit a digest that does not match the upload.
    SubstituteCommit,
    /// Seal the upload to a key other than the manager's.
    WrongRecipient,
    /// Sign the upload with a key that is not the claimed sender's.
    ForgeSender,
    /// Flip a byte of the manager's published global bundle.
    CorruptGlobal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// Collaborator index; ignored for `corrupt_global`.
    #[serde(default)]
    pub node: usize,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GasOverrides {
    pub deploy_cost: Option<u64>,
    #[serde(default)]
    pub functions: BTreeMap<String, AffineGas>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CasConfig {
    /// Injected delay per add/cat, microseconds.
    #[serde(default)]
    pub latency_us: u64,
    /// Mirror every blob to `<out>/cas/<hex>`.
    #[serde(default)]
    pub persist: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_collaborators: usize,
    pub rounds: u32,
    pub local_epochs: usize,
    pub method: Method,
    pub mu: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default = "default_hidden")]
    pub hidden_layers: Vec<usize>,
    /// Weight the FedAvg mean by shard size instead of the plain mean.
    #[serde(default)]
    pub sample_weighted: bool,
    #[serde(default)]
    pub scheduler: Scheduler,
    #[serde(default = "default_true")]
    pub centralized_baseline: bool,
    pub partition: PartitionScheme,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub failures: Vec<FailureSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub gas: GasOverrides,
    #[serde(default)]
    pub cas: CasConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_true() -> bool {
    true
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::from_toml(DEFAULT_CONFIG).expect("bundled default config is valid")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_toml(&text)?;
        Ok((cfg, text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn shapes(&self) -> Vec<usize> {
        let mut s = vec![self.dataset.n_features];
        s.extend(&self.hidden_layers);
        s.push(self.dataset.class_proportions.len());
        s
    }

    pub fn train_config(&self, rng_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
            method: self.method,
            mu: self.mu,
            rng_seed,
        }
    }

    pub fn gas_schedule(&self) -> GasSchedule {
        let mut s = GasSchedule::default();
        if let Some(d) = self.gas.deploy_cost {
            s.deploy_cost = d;
        }
        for (f, g) in &self.gas.functions {
            s.functions.insert(f.clone(), *g);
        }
        s
    }

    pub fn fail_round(&self, node: usize) -> Option<u32> {
        self.failures
            .iter()
            .filter(|f| f.node == node)
            .map(|f| f.round)
            .min()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_collaborators == 0 {
            return Err(invalid("n_collaborators", "must be positive"));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds", "must be positive"));
        }
        if self.local_epochs == 0 {
            return Err(invalid("local_epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("learning_rate", "must be a positive number"));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(invalid("mu", "must be >= 0"));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(invalid("hidden_layers", "need at least one non-empty hidden layer"));
        }
        self.dataset
            .validate()
            .map_err(|e| invalid("dataset", e.to_string()))?;
        if let PartitionScheme::LabelSkew { concentration } = self.partition {
            if !(concentration.is_finite() && concentration > 0.0) {
                return Err(invalid("partition.concentration", "must be positive"));
            }
        }
        let train_len = self.dataset.n_samples - (self.dataset.n_samples as f64 * 0.2).round() as usize;
        if self.n_collaborators > train_len {
            return Err(invalid(
                "n_collaborators",
                format!("more collaborators than the ~{train_len} training samples"),
            ));
        }
        for (i, f) in self.failures.iter().enumerate() {
            if f.node >= self.n_collaborators {
                return Err(invalid(
                    format!("failures[{i}].node"),
                    format!("{} is not below n_collaborators={}", f.node, self.n_collaborators),
                ));
            }
            if f.round == 0 || f.round > self.rounds {
                return Err(invalid(
                    format!("failures[{i}].round"),
                    format!("must be within 1..={}", self.rounds),
                ));
            }
        }
        for (i, f) in self.faults.iter().enumerate() {
            if f.node >= self.n_collaborators {
                return Err(invalid(format!("faults[{i}].node"), "out of range"));
            }
            if f.round == 0 || f.round > self.rounds {
                return Err(invalid(
                    format!("faults[{i}].round"),
                    format!("must be within 1..={}", self.rounds),
                ));
            }
        }
        for f in self.gas.functions.keys() {
            if !FUNCTIONS.contains(&f.as_str()) {
                return Err(invalid(format!("gas.functions.{f}"), "unknown contract function"));
            }
        }
        self.gas_schedule()
            .validate()
            .map_err(|e| invalid("gas", e.to_string()))?;
        Ok(())
    }
}
