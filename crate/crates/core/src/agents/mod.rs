//! The learning algorithms. Each agent owns its models, optimizers and RNG,
//! acts on the rows of its scope, records transitions and runs its update
//! from [`Agent::post_interaction`].

mod cem;
mod config;
mod ddpg;
mod dqn;
mod ppo;
mod sac;
mod tabular;
mod td3;
mod trpo;
mod util;

use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::env::Space;
use crate::memory::{MemoryError, SharedMemory};
use crate::model::ModelError;
use crate::noise::NoiseError;
use crate::scheduler::SchedulerError;
use crate::tensor::checkpoint::CheckpointError;
use crate::tensor::{Tensor, TensorError};

pub use cem::{cem_elite_mask, numpy_quantile, CemAgent, Episode};
pub use config::{
    AgentConfig, CemConfig, DdpgConfig, DqnConfig, PpoConfig, SacConfig, TabularConfig, Td3Config, TrpoConfig,
};
pub use ddpg::{ddpg_targets, DdpgAgent};
pub use dqn::{dqn_targets, DqnAgent};
pub use ppo::{clipped_surrogate, gae, PpoAgent};
pub use sac::{sac_targets, temperature_loss, SacAgent};
pub use tabular::{qlearning_update, sarsa_update, TabularAgent};
pub use td3::{clip_smoothing_noise, td3_targets, Td3Agent};
pub use trpo::{
    conjugate_gradient, fisher_vector_product, natural_gradient, trust_region_step, CgError, StepOutcome, TrpoAgent,
    TrustRegion,
};

/// Memory tensor names used by the off-policy agents.
pub mod names {
    pub const STATES: &str = "states";
    pub const ACTIONS: &str = "actions";
    pub const REWARDS: &str = "rewards";
    pub const NEXT_STATES: &str = "next_states";
    pub const TERMINATED: &str = "terminated";
    pub const TRUNCATED: &str = "truncated";
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("{kind} cannot act on {what} space")]
    Space { kind: AgentKind, what: String },
    #[error("invalid {kind} hyperparameter `{field}`: {msg}")]
    Config {
        kind: AgentKind,
        field: String,
        msg: String,
    },
    #[error("{0}")]
    Precondition(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    QLearning,
    Sarsa,
    Cem,
    Dqn,
    Ddqn,
    Ddpg,
    Td3,
    Sac,
    Ppo,
    Trpo,
}

impl AgentKind {
    pub const ALL: [AgentKind; 10] = [
        AgentKind::QLearning,
        AgentKind::Sarsa,
        AgentKind::Cem,
        AgentKind::Dqn,
        AgentKind::Ddqn,
        AgentKind::Ddpg,
        AgentKind::Td3,
        AgentKind::Sac,
        AgentKind::Ppo,
        AgentKind::Trpo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::QLearning => "q_learning",
            AgentKind::Sarsa => "sarsa",
            AgentKind::Cem => "cem",
            AgentKind::Dqn => "dqn",
            AgentKind::Ddqn => "ddqn",
            AgentKind::Ddpg => "ddpg",
            AgentKind::Td3 => "td3",
            AgentKind::Sac => "sac",
            AgentKind::Ppo => "ppo",
            AgentKind::Trpo => "trpo",
        }
    }

    /// Agents whose replay memory may be shared with other agents.
    pub fn is_off_policy(self) -> bool {
        matches!(
            self,
            AgentKind::Dqn | AgentKind::Ddqn | AgentKind::Ddpg | AgentKind::Td3 | AgentKind::Sac
        )
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Position of the current call within the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInfo {
    pub timestep: usize,
    pub total_timesteps: usize,
}

/// One environment step restricted to an agent's scope. `next_states` holds
/// the terminal observation for rows whose episode just ended.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub states: &'a Batch,
    pub actions: &'a Batch,
    pub rewards: &'a [f64],
    pub next_states: &'a Batch,
    pub terminated: &'a [bool],
    pub truncated: &'a [bool],
}

/// Named scalar metrics from one update.
pub type Metrics = Vec<(&'static str, f64)>;

pub trait Agent: Send {
    fn kind(&self) -> AgentKind;

    /// Name used in agent identifiers and logs.
    fn label(&self) -> String {
        self.kind().to_string()
    }

    /// Rows this agent acts on.
    fn num_envs(&self) -> usize;

    fn observation_space(&self) -> &Space;

    fn action_space(&self) -> &Space;

    /// The replay memory, for agents that keep one.
    fn memory(&self) -> Option<SharedMemory> {
        None
    }

    /// Training-time actions (with exploration) for `states`.
    fn act(&mut self, states: &Batch, step: StepInfo) -> Result<Batch, AgentError>;

    fn record_transition(&mut self, transition: &Transition<'_>, step: StepInfo) -> Result<(), AgentError>;

    /// Runs the update when its cadence is due.
    fn post_interaction(&mut self, step: StepInfo) -> Result<Metrics, AgentError>;

    /// Greedy or mean actions.
    fn eval_act(&mut self, states: &Batch) -> Result<Batch, AgentError>;

    /// Models, optimizer states and counters.
    fn named_tensors(&self) -> Vec<(String, Tensor)>;

    fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<(), AgentError>;

    fn parameters_finite(&self) -> bool;
}

/// Builds an agent acting on `num_envs` rows. Off-policy agents use `memory`
/// when given and otherwise allocate a private one.
pub fn build_agent(
    config: &AgentConfig,
    observation_space: &Space,
    action_space: &Space,
    num_envs: usize,
    memory: Option<SharedMemory>,
    seed: u64,
) -> Result<Box<dyn Agent>, AgentError> {
    if num_envs == 0 {
        return Err(AgentError::Precondition("agent scope must cover at least one env".into()));
    }
    if memory.is_some() && !config.kind().is_off_policy() {
        return Err(AgentError::Config {
            kind: config.kind(),
            field: "share_memory".into(),
            msg: "only off-policy agents can share a memory".into(),
        });
    }
    let (obs, act) = (observation_space, action_space);
    Ok(match config {
        AgentConfig::QLearning(c) => Box::new(TabularAgent::new(AgentKind::QLearning, c, obs, act, num_envs, seed)?),
        AgentConfig::Sarsa(c) => Box::new(TabularAgent::new(AgentKind::Sarsa, c, obs, act, num_envs, seed)?),
        AgentConfig::Cem(c) => Box::new(CemAgent::new(c, obs, act, num_envs, seed)?),
        AgentConfig::Dqn(c) => Box::new(DqnAgent::new(false, c, obs, act, num_envs, memory, seed)?),
        AgentConfig::Ddqn(c) => Box::new(DqnAgent::new(true, c, obs, act, num_envs, memory, seed)?),
        AgentConfig::Ddpg(c) => Box::new(DdpgAgent::new(c, obs, act, num_envs, memory, seed)?),
        AgentConfig::Td3(c) => Box::new(Td3Agent::new(c, obs, act, num_envs, memory, seed)?),
        AgentConfig::Sac(c) => Box::new(SacAgent::new(c, obs, act, num_envs, memory, seed)?),
        AgentConfig::Ppo(c) => Box::new(PpoAgent::new(c, obs, act, num_envs, seed)?),
        AgentConfig::Trpo(c) => Box::new(TrpoAgent::new(c, obs, act, num_envs, seed)?),
    })
}

#[cfg(test)]
mod tests;
