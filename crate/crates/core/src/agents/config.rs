//! Typed hyperparameters, one table per agent type. Unknown keys are errors.

use serde::{Deserialize, Serialize};

use super::{AgentError, AgentKind};
use crate::model::{Activation, ModelSpec};
use crate::noise::NoiseConfig;
use crate::scheduler::SchedulerConfig;

fn net(hidden: &[usize], activation: Activation) -> ModelSpec {
    ModelSpec::new(0, 0, hidden, activation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the run over which epsilon decays linearly.
    pub exploration_fraction: f64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            discount: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            exploration_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub policy: ModelSpec,
    pub learning_rate: f64,
    pub elite_fraction: f64,
    /// Completed episodes collected before each update.
    pub episodes_per_update: usize,
    /// Optimizer steps per update on the elite cross-entropy loss.
    pub gradient_steps: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            policy: net(&[32, 32], Activation::Tanh),
            learning_rate: 1e-2,
            elite_fraction: 0.2,
            episodes_per_update: 16,
            gradient_steps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub q_network: ModelSpec,
    pub learning_rate: f64,
    /// Final learning rate of a linear decay over the run; `None` keeps it constant.
    pub final_learning_rate: Option<f64>,
    pub discount: f64,
    pub batch_size: usize,
    /// Replay capacity in transitions.
    pub memory_size: usize,
    /// Transitions recorded before updates begin; defaults to `batch_size`.
    pub learning_starts: Option<usize>,
    pub gradient_steps: usize,
    /// Timesteps between hard target copies.
    pub target_update_interval: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Timesteps over which epsilon decays linearly.
    pub exploration_steps: usize,
    pub huber: bool,
    pub max_grad_norm: Option<f64>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            q_network: net(&[64, 64], Activation::Relu),
            learning_rate: 1e-3,
            final_learning_rate: None,
            discount: 0.99,
            batch_size: 64,
            memory_size: 50_000,
            learning_starts: None,
            gradient_steps: 1,
            target_update_interval: 250,
            epsilon_start: 1.0,
            epsilon_end: 0.02,
            exploration_steps: 5_000,
            huber: false,
            max_grad_norm: Some(10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub actor: ModelSpec,
    pub critic: ModelSpec,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub discount: f64,
    pub polyak: f64,
    pub batch_size: usize,
    pub memory_size: usize,
    pub learning_starts: Option<usize>,
    pub gradient_steps: usize,
    pub exploration_noise: NoiseConfig,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            actor: net(&[64, 64], Activation::Relu),
            critic: net(&[64, 64], Activation::Relu),
            actor_learning_rate: 1e-3,
            critic_learning_rate: 1e-3,
            discount: 0.99,
            polyak: 0.005,
            batch_size: 64,
            memory_size: 100_000,
            learning_starts: None,
            gradient_steps: 1,
            exploration_noise: NoiseConfig::Gaussian { mean: 0.0, std: 0.2 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    pub actor: ModelSpec,
    pub critic: ModelSpec,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub discount: f64,
    pub polyak: f64,
    pub batch_size: usize,
    pub memory_size: usize,
    pub learning_starts: Option<usize>,
    pub gradient_steps: usize,
    pub exploration_noise: NoiseConfig,
    pub policy_delay: usize,
    pub smooth_noise_std: f64,
    pub smooth_noise_clip: f64,
}

impl Default for Td3Config {
    fn default() -> Self {
        let d = DdpgConfig::default();
        Self {
            actor: d.actor,
            critic: d.critic,
            actor_learning_rate: d.actor_learning_rate,
            critic_learning_rate: d.critic_learning_rate,
            discount: d.discount,
            polyak: d.polyak,
            batch_size: d.batch_size,
            memory_size: d.memory_size,
            learning_starts: None,
            gradient_steps: 1,
            exploration_noise: NoiseConfig::Gaussian { mean: 0.0, std: 0.2 },
            policy_delay: 2,
            smooth_noise_std: 0.2,
            smooth_noise_clip: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub actor: ModelSpec,
    pub critic: ModelSpec,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub entropy_learning_rate: f64,
    pub discount: f64,
    pub polyak: f64,
    pub batch_size: usize,
    pub memory_size: usize,
    pub learning_starts: Option<usize>,
    pub gradient_steps: usize,
    pub initial_entropy_coefficient: f64,
    pub learn_entropy: bool,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            actor: net(&[64, 64], Activation::Relu),
            critic: net(&[64, 64], Activation::Relu),
            actor_learning_rate: 1e-3,
            critic_learning_rate: 1e-3,
            entropy_learning_rate: 1e-3,
            discount: 0.99,
            polyak: 0.005,
            batch_size: 64,
            memory_size: 100_000,
            learning_starts: None,
            gradient_steps: 1,
            initial_entropy_coefficient: 0.2,
            learn_entropy: true,
            target_entropy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub policy: ModelSpec,
    pub value: ModelSpec,
    pub learning_rate: f64,
    pub scheduler: SchedulerConfig,
    /// Steps per env collected before each update.
    pub rollouts: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub discount: f64,
    pub lambda: f64,
    pub ratio_clip: f64,
    pub value_clip: Option<f64>,
    pub value_loss_scale: f64,
    pub entropy_loss_scale: f64,
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            policy: net(&[64, 64], Activation::Tanh),
            value: net(&[64, 64], Activation::Tanh),
            learning_rate: 3e-4,
            scheduler: SchedulerConfig::Constant,
            rollouts: 16,
            epochs: 8,
            minibatches: 4,
            discount: 0.99,
            lambda: 0.95,
            ratio_clip: 0.2,
            value_clip: None,
            value_loss_scale: 0.5,
            entropy_loss_scale: 0.0,
            max_grad_norm: Some(0.5),
            normalize_advantages: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrpoConfig {
    pub policy: ModelSpec,
    pub value: ModelSpec,
    pub value_learning_rate: f64,
    pub rollouts: usize,
    pub discount: f64,
    pub lambda: f64,
    pub max_kl: f64,
    pub damping: f64,
    pub fvp_epsilon: f64,
    pub cg_iterations: usize,
    pub cg_residual_tol: f64,
    pub line_search_steps: usize,
    pub backtrack_ratio: f64,
    pub value_epochs: usize,
    pub value_minibatches: usize,
    pub normalize_advantages: bool,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        Self {
            policy: net(&[32, 32], Activation::Tanh),
            value: net(&[32, 32], Activation::Tanh),
            value_learning_rate: 1e-3,
            rollouts: 64,
            discount: 0.99,
            lambda: 0.95,
            max_kl: 0.01,
            damping: 0.1,
            fvp_epsilon: 1e-6,
            cg_iterations: 10,
            cg_residual_tol: 1e-10,
            line_search_steps: 10,
            backtrack_ratio: 0.8,
            value_epochs: 5,
            value_minibatches: 4,
            normalize_advantages: true,
        }
    }
}

/// Hyperparameters tagged by agent type.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentConfig {
    QLearning(TabularConfig),
    Sarsa(TabularConfig),
    Cem(CemConfig),
    Dqn(DqnConfig),
    Ddqn(DqnConfig),
    Ddpg(DdpgConfig),
    Td3(Td3Config),
    Sac(SacConfig),
    Ppo(PpoConfig),
    Trpo(TrpoConfig),
}

fn parse<T: serde::de::DeserializeOwned>(kind: AgentKind, value: toml::Value) -> Result<T, AgentError> {
    T::deserialize(value).map_err(|e| AgentError::Config {
        kind,
        field: "hyperparameters".into(),
        msg: e.to_string(),
    })
}

impl AgentConfig {
    pub fn default_for(kind: AgentKind) -> Self {
        match kind {
            AgentKind::QLearning => AgentConfig::QLearning(Default::default()),
            AgentKind::Sarsa => AgentConfig::Sarsa(Default::default()),
            AgentKind::Cem => AgentConfig::Cem(Default::default()),
            AgentKind::Dqn => AgentConfig::Dqn(Default::default()),
            AgentKind::Ddqn => AgentConfig::Ddqn(Default::default()),
            AgentKind::Ddpg => AgentConfig::Ddpg(Default::default()),
            AgentKind::Td3 => AgentConfig::Td3(Default::default()),
            AgentKind::Sac => AgentConfig::Sac(Default::default()),
            AgentKind::Ppo => AgentConfig::Ppo(Default::default()),
            AgentKind::Trpo => AgentConfig::Trpo(Default::default()),
        }
    }

    /// Parses the hyperparameter table of an agent of type `kind`; missing
    /// keys take their defaults.
    pub fn from_toml(kind: AgentKind, value: toml::Value) -> Result<Self, AgentError> {
        let cfg = match kind {
            AgentKind::QLearning => AgentConfig::QLearning(parse(kind, value)?),
            AgentKind::Sarsa => AgentConfig::Sarsa(parse(kind, value)?),
            AgentKind::Cem => AgentConfig::Cem(parse(kind, value)?),
            AgentKind::Dqn => AgentConfig::Dqn(parse(kind, value)?),
            AgentKind::Ddqn => AgentConfig::Ddqn(parse(kind, value)?),
            AgentKind::Ddpg => AgentConfig::Ddpg(parse(kind, value)?),
            AgentKind::Td3 => AgentConfig::Td3(parse(kind, value)?),
            AgentKind::Sac => AgentConfig::Sac(parse(kind, value)?),
            AgentKind::Ppo => AgentConfig::Ppo(parse(kind, value)?),
            AgentKind::Trpo => AgentConfig::Trpo(parse(kind, value)?),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The full hyperparameter table, defaults included.
    pub fn to_toml(&self) -> toml::Value {
        let v = match self {
            AgentConfig::QLearning(c) | AgentConfig::Sarsa(c) => toml::Value::try_from(c),
            AgentConfig::Cem(c) => toml::Value::try_from(c),
            AgentConfig::Dqn(c) | AgentConfig::Ddqn(c) => toml::Value::try_from(c),
            AgentConfig::Ddpg(c) => toml::Value::try_from(c),
            AgentConfig::Td3(c) => toml::Value::try_from(c),
            AgentConfig::Sac(c) => toml::Value::try_from(c),
            AgentConfig::Ppo(c) => toml::Value::try_from(c),
            AgentConfig::Trpo(c) => toml::Value::try_from(c),
        };
        v.expect("hyperparameters serialize")
    }

    pub fn kind(&self) -> AgentKind {
        match self {
            AgentConfig::QLearning(_) => AgentKind::QLearning,
            AgentConfig::Sarsa(_) => AgentKind::Sarsa,
            AgentConfig::Cem(_) => AgentKind::Cem,
            AgentConfig::Dqn(_) => AgentKind::Dqn,
            AgentConfig::Ddqn(_) => AgentKind::Ddqn,
            AgentConfig::Ddpg(_) => AgentKind::Ddpg,
            AgentConfig::Td3(_) => AgentKind::Td3,
            AgentConfig::Sac(_) => AgentKind::Sac,
            AgentConfig::Ppo(_) => AgentKind::Ppo,
            AgentConfig::Trpo(_) => AgentKind::Trpo,
        }
    }

    /// Replay capacity in transitions, for off-policy agents.
    pub fn memory_size(&self) -> Option<usize> {
        match self {
            AgentConfig::Dqn(c) | AgentConfig::Ddqn(c) => Some(c.memory_size),
            AgentConfig::Ddpg(c) => Some(c.memory_size),
            AgentConfig::Td3(c) => Some(c.memory_size),
            AgentConfig::Sac(c) => Some(c.memory_size),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let kind = self.kind();
        let mut checks: Vec<(&str, bool, &str)> = Vec::new();
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        match self {
            AgentConfig::QLearning(c) | AgentConfig::Sarsa(c) => {
                checks.push(("learning_rate", unit(c.learning_rate), "must lie in [0, 1]"));
                checks.push(("discount", unit(c.discount), "must lie in [0, 1]"));
                checks.push(("epsilon_start", unit(c.epsilon_start), "must lie in [0, 1]"));
                checks.push(("epsilon_end", unit(c.epsilon_end), "must lie in [0, 1]"));
                checks.push(("exploration_fraction", unit(c.exploration_fraction), "must lie in [0, 1]"));
            }
            AgentConfig::Cem(c) => {
                checks.push(("learning_rate", c.learning_rate > 0.0, "must be positive"));
                checks.push((
                    "elite_fraction",
                    c.elite_fraction > 0.0 && c.elite_fraction <= 1.0,
                    "must lie in (0, 1]",
                ));
                checks.push(("episodes_per_update", c.episodes_per_update > 0, "must be positive"));
                checks.push(("gradient_steps", c.gradient_steps > 0, "must be positive"));
            }
            AgentConfig::Dqn(c) | AgentConfig::Ddqn(c) => {
                checks.push(("learning_rate", c.learning_rate > 0.0, "must be positive"));
                checks.push((
                    "final_learning_rate",
                    c.final_learning_rate.map_or(true, |f| f > 0.0 && f <= c.learning_rate),
                    "must lie in (0, learning_rate]",
                ));
                checks.push(("discount", unit(c.discount), "must lie in [0, 1]"));
                checks.push(("batch_size", c.batch_size > 0, "must be positive"));
                checks.push(("memory_size", c.memory_size > 0, "must be positive"));
                checks.push(("target_update_interval", c.target_update_interval > 0, "must be positive"));
                checks.push(("epsilon_start", unit(c.epsilon_start), "must lie in [0, 1]"));
                checks.push(("epsilon_end", unit(c.epsilon_end), "must lie in [0, 1]"));
            }
            AgentConfig::Ddpg(c) => {
                checks.push(("actor_learning_rate", c.actor_learning_rate > 0.0, "must be positive"));
                checks.push(("critic_learning_rate", c.critic_learning_rate > 0.0, "must be positive"));
                checks.push(("discount", unit(c.discount), "must lie in [0, 1]"));
                checks.push(("polyak", unit(c.polyak), "must lie in [0, 1]"));
                checks.push(("batch_size", c.batch_size > 0, "must be positive"));
                checks.push(("memory_size", c.memory_size > 0, "must be positive"));
            }
            AgentConfig::Td3(c) => {
                checks.push(("actor_learning_rate", c.actor_learning_rate > 0.0, "must be positive"));
                checks.push(("critic_learning_rate", c.critic_learning_rate > 0.0, "must be positive"));
                checks.push(("discount", unit(c.discount), "must lie in [0, 1]"));
                checks.push(("polyak", unit(c.polyak), "must lie in [0, 1]"));
                checks.push(("batch_size", c.batch_size > 0, "must be positive"));
                checks.push(("memory_size", c.memory_size > 0, "must be positive"));
                checks.push(("policy_delay", c.policy_delay > 0, "must be positive"));
                checks.push(("smooth_noise_std", c.smooth_noise_std >= 0.0, "must be non-negative"));
                checks.push(("smooth_noise_clip", c.smooth_noise_clip >= 0.0, "must be non-negative"));
            }
            AgentConfig::Sac(c) => {
                checks.push(("actor_learning_rate", c.actor_learning_rate > 0.0, "must be positive"));
                checks.push(("critic_learning_rate", c.critic_learning_rate > 0.0, "must be positive"));
                checks.push(("entropy_learning_rate", c.entropy_learning_rate > 0.0, "must be positive"));
                checks.push(("discount", unit(c.discount), "must lie in [0, 1]"));
                checks.push(("polyak", unit(c.polyak), "must lie in [0, 1]"));
                checks.push(("batch_size", c.batch_size > 0, "must be positive"));
                checks.push(("memory_size", c.memory_size > 0, "must be positive"));
                checks.push((
                    "initial_entropy_coefficient",
                    c.initial_entropy_coefficient > 0.0,
                    "must be positive",
                ));
            }
            AgentConfig::Ppo(c) => {
                checks.push(("learning_rate", c.learning_rate > 0.0, "must be positive"));
                checks.push(("rollouts", c.rollouts > 0, "must be positive"));
                checks.push(("epochs", c.epochs > 0, "must be positive"));
                checks.push(("minibatches", c.minibatches > 0, "must be positive"));
                checks.push(("discount", unit(c.discount), "must lie in [0, 1]"));
                checks.push(("lambda", unit(c.lambda), "must lie in [0, 1]"));
                checks.push(("ratio_clip", c.ratio_clip > 0.0, "must be positive"));
            }
            AgentConfig::Trpo(c) => {
                checks.push(("value_learning_rate", c.value_learning_rate > 0.0, "must be positive"));
                checks.push(("rollouts", c.rollouts > 0, "must be positive"));
                checks.push(("discount", unit(c.discount), "must lie in [0, 1]"));
                checks.push(("lambda", unit(c.lambda), "must lie in [0, 1]"));
                checks.push(("max_kl", c.max_kl > 0.0, "must be positive"));
                checks.push(("damping", c.damping >= 0.0, "must be non-negative"));
                checks.push(("fvp_epsilon", c.fvp_epsilon > 0.0, "must be positive"));
                checks.push((
                    "backtrack_ratio",
                    c.backtrack_ratio > 0.0 && c.backtrack_ratio < 1.0,
                    "must lie in (0, 1)",
                ));
                checks.push(("value_minibatches", c.value_minibatches > 0, "must be positive"));
            }
        }
        match checks.into_iter().find(|(_, ok, _)| !ok) {
            Some((field, _, msg)) => Err(AgentError::Config {
                kind,
                field: field.into(),
                msg: msg.into(),
            }),
            None => Ok(()),
        }
    }
}
