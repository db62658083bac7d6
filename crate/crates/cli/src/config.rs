//! Experiment configuration: a text file of `section.key = value` lines (TOML syntax),
//! every key optional.
//!
//! | key | default |
//! |-----|---------|
//! | `env.min_vehicles` | 3 |
//! | `env.max_vehicles` | 12 |
//! | `env.ego_priority` | false |
//! | `env.ego_destination` | `"left"` |
//! | `env.seeds` | `[0, 1, 2]` |
//! | `agent.kind` | `"ego_attention"` (`fcn_list`, `cnn_grid`, `ego_attention`) |
//! | `agent.fcn_hidden` | `[128, 128]` |
//! | `agent.cnn_channels` | `[16, 32, 64]` |
//! | `agent.cnn_dense` | `[20]` |
//! | `agent.encoder_layers` | `[64, 64]` |
//! | `agent.attention_heads` | 2 |
//! | `agent.attention_layers` | 1 |
//! | `agent.combine_bias` | false |
//! | `agent.decoder_hidden` | `[64, 64]` |
//! | `training.episodes` | 1000 |
//! | `training.gamma` | 0.95 |
//! | `training.learning_rate` | 5e-4 |
//! | `training.adam_beta1` / `training.adam_beta2` | 0.9 / 0.999 |
//! | `training.adam_epsilon` | 1e-8 |
//! | `training.batch_size` | 64 |
//! | `training.replay_capacity` | 15000 |
//! | `training.target_sync` | 50 |
//! | `training.epsilon_start` / `training.epsilon_end` | 1.0 / 0.05 |
//! | `training.epsilon_decay_steps` | 10000 |
//! | `evaluation.episodes` | 100 |
//! | `evaluation.seed` | 2024 |
//! | `output.dir` | `"runs"` |

use std::path::{Path, PathBuf};

use crossroads_core::dqn::{EpsilonSchedule, TrainConfig};
use crossroads_core::nn::{AdamConfig, ArchConfig, ModelKind};
use crossroads_core::sim::{EnvConfig, Turn, MAX_SCRIPTED_VEHICLES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}` expects {expected}")]
    Type { key: String, expected: &'static str },
    #[error("config key `{key}` out of range: {message}")]
    Range { key: String, message: String },
}

impl ConfigError {
    /// The offending key, when the error concerns one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey(k) => Some(k),
            ConfigError::Type { key, .. } | ConfigError::Range { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSection {
    pub min_vehicles: usize,
    pub max_vehicles: usize,
    pub ego_priority: bool,
    pub ego_destination: Turn,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSection {
    pub kind: ModelKind,
    #[serde(flatten)]
    pub arch: ArchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSection {
    pub episodes: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSection {
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: PathBuf,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub agent: AgentSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        let train = TrainConfig::default();
        Self {
            env: EnvSection {
                min_vehicles: env.min_vehicles,
                max_vehicles: env.max_vehicles,
                ego_priority: env.ego_priority,
                ego_destination: env.ego_destination,
                seeds: vec![0, 1, 2],
            },
            agent: AgentSection {
                kind: ModelKind::EgoAttention,
                arch: ArchConfig::default(),
            },
            training: TrainingSection {
                episodes: train.episodes,
                gamma: train.gamma,
                learning_rate: train.optimizer.learning_rate,
                adam_beta1: train.optimizer.beta1,
                adam_beta2: train.optimizer.beta2,
                adam_epsilon: train.optimizer.epsilon,
                batch_size: train.batch_size,
                replay_capacity: train.replay_capacity,
                target_sync: train.target_sync,
                epsilon_start: train.epsilon.start,
                epsilon_end: train.epsilon.end,
                epsilon_decay_steps: train.epsilon.decay_steps,
            },
            evaluation: EvaluationSection {
                episodes: 100,
                seed: 2024,
            },
            output: OutputSection { dir: PathBuf::from("runs") },
        }
    }
}

fn type_err(key: &str, expected: &'static str) -> ConfigError {
    ConfigError::Type {
        key: key.to_string(),
        expected,
    }
}

fn range_err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        key: key.to_string(),
        message: message.into(),
    }
}

fn as_u64(key: &str, v: &toml::Value) -> Result<u64, ConfigError> {
    let i = v.as_integer().ok_or_else(|| type_err(key, "a non-negative integer"))?;
    u64::try_from(i).map_err(|_| range_err(key, format!("{i} is negative")))
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize, ConfigError> {
    as_u64(key, v).map(|x| x as usize)
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(type_err(key, "a number")),
    }
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool, ConfigError> {
    v.as_bool().ok_or_else(|| type_err(key, "true or false"))
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| type_err(key, "a string"))
}

fn as_sizes(key: &str, v: &toml::Value) -> Result<Vec<usize>, ConfigError> {
    let arr = v.as_array().ok_or_else(|| type_err(key, "an array of integers"))?;
    arr.iter().map(|x| as_usize(key, x)).collect()
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut config = Self::default();
        for (key, value) in &entries {
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, key: &str, v: &toml::Value) -> Result<(), ConfigError> {
        let t = &mut self.training;
        let a = &mut self.agent.arch;
        match key {
            "env.min_vehicles" => self.env.min_vehicles = as_usize(key, v)?,
            "env.max_vehicles" => self.env.max_vehicles = as_usize(key, v)?,
            "env.ego_priority" => self.env.ego_priority = as_bool(key, v)?,
            "env.ego_destination" => {
                self.env.ego_destination = as_str(key, v)?.parse().map_err(|m: String| range_err(key, m))?
            }
            "env.seeds" => {
                let arr = v.as_array().ok_or_else(|| type_err(key, "an array of seeds"))?;
                self.env.seeds = arr.iter().map(|x| as_u64(key, x)).collect::<Result<_, _>>()?;
            }
            "agent.kind" => self.agent.kind = as_str(key, v)?.parse().map_err(|m: String| range_err(key, m))?,
            "agent.fcn_hidden" => a.fcn_hidden = as_sizes(key, v)?,
            "agent.cnn_channels" => a.cnn_channels = as_sizes(key, v)?,
            "agent.cnn_dense" => a.cnn_dense = as_sizes(key, v)?,
            "agent.encoder_layers" => a.encoder_layers = as_sizes(key, v)?,
            "agent.attention_heads" => a.attention_heads = as_usize(key, v)?,
            "agent.attention_layers" => a.attention_layers = as_usize(key, v)?,
            "agent.combine_bias" => a.combine_bias = as_bool(key, v)?,
            "agent.decoder_hidden" => a.decoder_hidden = as_sizes(key, v)?,
            "training.episodes" => t.episodes = as_usize(key, v)?,
            "training.gamma" => t.gamma = as_f64(key, v)?,
            "training.learning_rate" => t.learning_rate = as_f64(key, v)?,
            "training.adam_beta1" => t.adam_beta1 = as_f64(key, v)?,
            "training.adam_beta2" => t.adam_beta2 = as_f64(key, v)?,
            "training.adam_epsilon" => t.adam_epsilon = as_f64(key, v)?,
            "training.batch_size" => t.batch_size = as_usize(key, v)?,
            "training.replay_capacity" => t.replay_capacity = as_usize(key, v)?,
            "training.target_sync" => t.target_sync = as_u64(key, v)?,
            "training.epsilon_start" => t.epsilon_start = as_f64(key, v)?,
            "training.epsilon_end" => t.epsilon_end = as_f64(key, v)?,
            "training.epsilon_decay_steps" => t.epsilon_decay_steps = as_u64(key, v)?,
            "evaluation.episodes" => self.evaluation.episodes = as_usize(key, v)?,
            "evaluation.seed" => self.evaluation.seed = as_u64(key, v)?,
            "output.dir" => self.output.dir = PathBuf::from(as_str(key, v)?),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.env;
        if e.max_vehicles > MAX_SCRIPTED_VEHICLES {
            return Err(range_err("env.max_vehicles", format!("at most {MAX_SCRIPTED_VEHICLES}")));
        }
        if e.min_vehicles > e.max_vehicles {
            return Err(range_err("env.min_vehicles", "must not exceed env.max_vehicles"));
        }
        if e.seeds.is_empty() {
            return Err(range_err("env.seeds", "needs at least one seed"));
        }
        let t = &self.training;
        let unit_open = |x: f64| (0.0..1.0).contains(&x);
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let checks: [(&str, bool, &str); 10] = [
            ("training.gamma", unit_open(t.gamma), "must lie in [0, 1)"),
            ("training.learning_rate", t.learning_rate > 0.0 && t.learning_rate.is_finite(), "must be positive"),
            ("training.adam_beta1", unit_open(t.adam_beta1), "must lie in [0, 1)"),
            ("training.adam_beta2", unit_open(t.adam_beta2), "must lie in [0, 1)"),
            ("training.adam_epsilon", t.adam_epsilon > 0.0, "must be positive"),
            ("training.batch_size", t.batch_size > 0, "must be positive"),
            ("training.replay_capacity", t.replay_capacity >= t.batch_size, "must hold at least one batch"),
            ("training.target_sync", t.target_sync > 0, "must be positive"),
            ("training.epsilon_start", unit(t.epsilon_start), "must lie in [0, 1]"),
            ("training.epsilon_end", unit(t.epsilon_end), "must lie in [0, 1]"),
        ];
        if let Some((key, _, msg)) = checks.iter().find(|c| !c.1) {
            return Err(range_err(key, *msg));
        }
        if self.evaluation.episodes == 0 {
            return Err(range_err("evaluation.episodes", "must be positive"));
        }
        self.agent
            .arch
            .validate(self.agent.kind)
            .map_err(|err| range_err(arch_key(&err.to_string()), err.to_string()))
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            min_vehicles: self.env.min_vehicles,
            max_vehicles: self.env.max_vehicles,
            ego_priority: self.env.ego_priority,
            ego_destination: self.env.ego_destination,
            ..EnvConfig::default()
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            gamma: t.gamma,
            optimizer: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.adam_beta1,
                beta2: t.adam_beta2,
                epsilon: t.adam_epsilon,
            },
            batch_size: t.batch_size,
            replay_capacity: t.replay_capacity,
            target_sync: t.target_sync,
            epsilon: EpsilonSchedule {
                start: t.epsilon_start,
                end: t.epsilon_end,
                decay_steps: t.epsilon_decay_steps,
            },
            episodes: t.episodes,
            seed,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex_digest(json.as_bytes())
    }
}

/// Best-effort mapping of an architecture error message to the key it concerns.
fn arch_key(message: &str) -> &'static str {
    const KEYS: [(&str, &str); 7] = [
        ("fcn_hidden", "agent.fcn_hidden"),
        ("cnn_channels", "agent.cnn_channels"),
        ("cnn_dense", "agent.cnn_dense"),
        ("encoder_layers", "agent.encoder_layers"),
        ("attention_heads", "agent.attention_heads"),
        ("attention_layers", "agent.attention_layers"),
        ("decoder_hidden", "agent.decoder_hidden"),
    ];
    KEYS.iter()
        .find(|(needle, _)| message.contains(needle))
        .map_or("agent.kind", |(_, key)| key)
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
