//! Run configuration: a single JSON file covering endpoints, seeds, stage
//! sizes, mixing ratios, dedup parameters, and budgets. API keys are named
//! by environment variable only and never appear in the file.

use crate::corpus::{self, ShortfallPolicy};
use crate::dedup::DedupParams;
use crate::gateway::{Backend, HttpBackend, MockBackend};
use crate::ledger::Stage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("no endpoint configured for role {0:?}")]
    MissingEndpoint(Role),
    #[error("invalid endpoint for role {role:?}: {reason}")]
    BadEndpoint { role: Role, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which model a stage talks to. Roles are pure configuration so the
/// teacher and the aligned small generators are interchangeable URLs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Junior,
    Senior,
    Revisor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endpoint {
    Mock {
        seed: u64,
    },
    Http {
        url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_timeout_secs() -> u64 {
    60
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSizes {
    pub seed: usize,
    pub judge: usize,
    pub revise: usize,
    pub synth: usize,
}

impl Default for StageSizes {
    fn default() -> Self {
        StageSizes {
            seed: 25_000,
            judge: 10_000,
            revise: 10_000,
            synth: 50_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixConfig {
    pub total: usize,
    pub ratios: BTreeMap<String, u64>,
    pub shortfall: ShortfallPolicy,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            total: 230_000,
            ratios: corpus::default_ratios(),
            shortfall: ShortfallPolicy::Error,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetConfig {
    /// Per-stage hard call caps ("seed_sft", "dpo_signal", "revise_signal").
    #[serde(default)]
    pub call_caps: BTreeMap<String, u64>,
    /// When true, breaching a cap only flags the report instead of refusing.
    #[serde(default)]
    pub soft: bool,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            call_caps: BTreeMap::new(),
            soft: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub topics_file: PathBuf,
    /// Optional external template directory; the built-in set is used when
    /// absent.
    pub template_dir: Option<PathBuf>,
    pub max_depth: usize,
    pub n_topics: usize,
    pub tasks_per_topic: usize,
    pub endpoints: BTreeMap<Role, Endpoint>,
    pub stage_sizes: StageSizes,
    pub candidates_per_judge: usize,
    pub max_in_flight: usize,
    pub retry_cap: u32,
    pub backoff_ms: u64,
    pub mix: MixConfig,
    pub dedup: DedupParams,
    pub budgets: BudgetConfig,
    pub shard_size: usize,
}

impl Default for Config {
    fn default() -> Self {
        let mut endpoints = BTreeMap::new();
        for role in [Role::Teacher, Role::Junior, Role::Senior, Role::Revisor] {
            endpoints.insert(role, Endpoint::Mock { seed: 0 });
        }
        Config {
            seed: 0,
            topics_file: PathBuf::from("topics.txt"),
            template_dir: None,
            max_depth: 4,
            n_topics: 100,
            tasks_per_topic: 4,
            endpoints,
            stage_sizes: StageSizes::default(),
            candidates_per_judge: 4,
            max_in_flight: 8,
            retry_cap: 5,
            backoff_ms: 200,
            mix: MixConfig::default(),
            dedup: DedupParams::default(),
            budgets: BudgetConfig::default(),
            shard_size: 10_000,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let body = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Config =
            serde_json::from_str(&body).map_err(|source| ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_in_flight == 0 {
            return Err(ConfigError::Invalid("max_in_flight must be >= 1".into()));
        }
        if self.retry_cap == 0 {
            return Err(ConfigError::Invalid("retry_cap must be >= 1".into()));
        }
        if self.candidates_per_judge < 2 {
            return Err(ConfigError::Invalid(
                "candidates_per_judge must be >= 2".into(),
            ));
        }
        if self.shard_size == 0 {
            return Err(ConfigError::Invalid("shard_size must be >= 1".into()));
        }
        if self.max_depth < 2 || self.max_depth % 2 != 0 {
            return Err(ConfigError::Invalid(
                "max_depth must be an even number >= 2".into(),
            ));
        }
        for role in [Role::Teacher, Role::Junior, Role::Senior, Role::Revisor] {
            match self.endpoints.get(&role) {
                None => return Err(ConfigError::MissingEndpoint(role)),
                Some(Endpoint::Http { url, .. }) => {
                    // Fail bad URLs at config time, not mid-run.
                    HttpBackend::new(url, "probe", None, Duration::from_secs(1)).map_err(
                        |reason| ConfigError::BadEndpoint { role, reason },
                    )?;
                }
                Some(Endpoint::Mock { .. }) => {}
            }
        }
        for stage in self.budgets.call_caps.keys() {
            stage
                .parse::<Stage>()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn backend(&self, role: Role) -> Result<Arc<dyn Backend>, ConfigError> {
        match self.endpoints.get(&role) {
            None => Err(ConfigError::MissingEndpoint(role)),
            Some(Endpoint::Mock { seed }) => Ok(Arc::new(MockBackend::new(*seed))),
            Some(Endpoint::Http {
                url,
                model,
                api_key_env,
                timeout_secs,
            }) => {
                let backend = HttpBackend::new(
                    url,
                    model.clone(),
                    api_key_env.clone(),
                    Duration::from_secs(*timeout_secs),
                )
                .map_err(|reason| ConfigError::BadEndpoint { role, reason })?;
                Ok(Arc::new(backend))
            }
        }
    }

    /// Hash of the canonical serialization; stage manifests embed it so
    /// config edits mark downstream stages stale.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
