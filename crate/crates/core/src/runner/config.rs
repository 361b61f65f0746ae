use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, AgentError, AgentKind};
use crate::env::{make_env, EnvParams};
use crate::trainer::{partition_scopes, Scope, TrainerConfig, TrainerError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{source_name}:{line}:{column}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("invalid `{field}`: {msg}")]
    Invalid { field: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no config file or bundled config named `{0}`")]
    NotFound(String),
}

fn invalid(field: impl Into<String>, msg: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    #[serde(default = "one")]
    pub num_envs: usize,
    #[serde(default)]
    pub params: EnvParams,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    #[serde(rename = "type")]
    pub kind: AgentKind,
    /// Number of sub-environment rows this agent controls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<usize>,
    #[serde(default)]
    pub share_memory: bool,
    /// Agent hyperparameters, including network specs.
    #[serde(default)]
    pub hyperparameters: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outdir: Option<PathBuf>,
    /// Write every replay memory as CSV next to the metrics after training.
    #[serde(default)]
    pub export_memory: bool,
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub agents: Vec<AgentEntry>,
}

fn default_name() -> String {
    "experiment".into()
}

/// Experiment configs shipped with the library, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("pendulum_ddpg", include_str!("../../configs/pendulum_ddpg.toml")),
    ("pendulum_td3", include_str!("../../configs/pendulum_td3.toml")),
    ("pendulum_sac", include_str!("../../configs/pendulum_sac.toml")),
    ("cartpole_ppo_512", include_str!("../../configs/cartpole_ppo_512.toml")),
    ("cartpole_dqn", include_str!("../../configs/cartpole_dqn.toml")),
    ("cartpole_trpo", include_str!("../../configs/cartpole_trpo.toml")),
    ("cartpole_cem", include_str!("../../configs/cartpole_cem.toml")),
    ("gridworld_qlearning", include_str!("../../configs/gridworld_qlearning.toml")),
    ("gridworld_sarsa", include_str!("../../configs/gridworld_sarsa.toml")),
    ("scopes_512_shared", include_str!("../../configs/scopes_512_shared.toml")),
    ("scopes_512_private", include_str!("../../configs/scopes_512_private.toml")),
];

/// Source text of the bundled config `name`.
pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Loads a config from a file, or from the bundled config of that name when
/// no such file exists.
pub fn load_config(path_or_name: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path_or_name.as_ref();
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        return parse_config(&text, &path.display().to_string());
    }
    let name = path.to_string_lossy();
    let stem = name.strip_suffix(".toml").unwrap_or(&name);
    match bundled(stem) {
        Some(text) => parse_config(text, stem),
        None => Err(ConfigError::NotFound(name.into_owned())),
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Parses and validates config text, filling every default.
pub fn parse_config(text: &str, source_name: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        ConfigError::Parse {
            source_name: source_name.to_string(),
            line,
            column,
            msg: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    let resolved = cfg.agent_configs()?;
    for (entry, c) in cfg.agents.iter_mut().zip(resolved) {
        if let toml::Value::Table(t) = c.to_toml() {
            entry.hyperparameters = t;
        }
    }
    Ok(cfg)
}

fn trainer_error(e: TrainerError) -> ConfigError {
    match e {
        TrainerError::Config { field, msg } => invalid(format!("trainer.{field}"), msg),
        TrainerError::Scope(msg) => invalid("agents.scope", msg),
        other => invalid("trainer", other),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.agents.is_empty() {
            return Err(invalid("agents", "at least one agent is required"));
        }
        if self.env.num_envs == 0 {
            return Err(invalid("env.num_envs", "must be at least 1"));
        }
        make_env(&self.env.name, 1, 0, &self.env.params).map_err(|e| match e {
            crate::env::EnvError::UnknownEnv(_) => invalid("env.name", e),
            _ => invalid("env.params", e),
        })?;
        self.trainer.validate().map_err(trainer_error)?;
        self.scopes()?;
        for (i, a) in self.agents.iter().enumerate() {
            if a.share_memory && !a.kind.is_off_policy() {
                return Err(invalid(
                    format!("agents[{i}].share_memory"),
                    format!("{} agents keep no replay memory to share", a.kind),
                ));
            }
        }
        self.agent_configs()?;
        Ok(())
    }

    /// Row ranges of the agents, in order.
    pub fn scopes(&self) -> Result<Vec<Scope>, ConfigError> {
        let given: Vec<usize> = self.agents.iter().filter_map(|a| a.scope).collect();
        if !given.is_empty() && given.len() != self.agents.len() {
            return Err(invalid("agents.scope", "give a scope count for every agent or for none"));
        }
        partition_scopes(self.env.num_envs, &given, self.agents.len()).map_err(trainer_error)
    }

    /// Typed hyperparameters of every agent.
    pub fn agent_configs(&self) -> Result<Vec<AgentConfig>, ConfigError> {
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                AgentConfig::from_toml(a.kind, toml::Value::Table(a.hyperparameters.clone())).map_err(|e| match e {
                    AgentError::Config { field, msg, .. } => {
                        invalid(format!("agents[{i}].{}", hyper_field(&field)), msg)
                    }
                    other => invalid(format!("agents[{i}]"), other),
                })
            })
            .collect()
    }

    /// Serialized form with every default made explicit.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn hyper_field(field: &str) -> String {
    if field == "hyperparameters" {
        field.to_string()
    } else {
        format!("hyperparameters.{field}")
    }
}
