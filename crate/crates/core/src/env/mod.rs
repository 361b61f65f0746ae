//! Vectorized environments.
//!
//! A [`VecEnv`] steps `num_envs` identical sub-environments in lockstep and
//! resets finished ones automatically inside `step`: for a row with
//! `dones[i] == true` the returned observation already belongs to the next
//! episode, while the last observation of the finished episode is kept in the
//! row's info under `terminal_observation`. Time-limit truncation also sets
//! `dones[i]` and additionally adds a `truncated` info entry.

pub mod cartpole;
pub mod echo;
pub mod gridworld;
pub mod pendulum;
mod space;
mod wrap;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::Batch;

pub use space::Space;
pub use wrap::{wrap, ExternalEnv, ExternalStep, Method};

/// Names accepted by [`make_env`].
pub const ENV_NAMES: [&str; 4] = ["cartpole", "pendulum", "gridworld", "echo"];

pub const TERMINAL_OBSERVATION: &str = "terminal_observation";
pub const TRUNCATED: &str = "truncated";
pub const ACTION: &str = "action";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("unknown environment `{0}` (expected one of cartpole, pendulum, gridworld, echo)")]
    UnknownEnv(String),
    #[error("invalid environment parameter `{name}`: {msg}")]
    InvalidParam { name: String, msg: String },
    #[error("unknown environment parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("num_envs must be at least 1")]
    NoEnvs,
    #[error("actions have shape [{rows} x {cols}], expected [{expected_rows} x {expected_cols}]")]
    ActionShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("action {value} in row {row} is outside the discrete range 0..{n}")]
    ActionRange { row: usize, value: f64, n: usize },
    #[error("external environment does not provide `{0}`")]
    MissingMethod(&'static str),
    #[error("external environment returned malformed data: {0}")]
    Malformed(String),
    #[error("row {0} out of range")]
    Row(usize),
}

/// Environment parameters as a flat key-value record.
pub type EnvParams = BTreeMap<String, f64>;

/// Consumes known keys from an [`EnvParams`] record, rejecting leftovers.
pub(crate) struct ParamReader {
    params: EnvParams,
}

impl ParamReader {
    fn new(params: &EnvParams) -> Self {
        Self { params: params.clone() }
    }

    pub(crate) fn usize(&mut self, name: &str, default: usize) -> Result<usize, EnvError> {
        match self.params.remove(name) {
            None => Ok(default),
            Some(v) if v >= 0.0 && v.fract() == 0.0 && v.is_finite() => Ok(v as usize),
            Some(v) => Err(EnvError::InvalidParam {
                name: name.into(),
                msg: format!("expected a non-negative integer, got {v}"),
            }),
        }
    }

    pub(crate) fn positive_usize(&mut self, name: &str, default: usize) -> Result<usize, EnvError> {
        match self.usize(name, default)? {
            0 => Err(EnvError::InvalidParam {
                name: name.into(),
                msg: "must be positive".into(),
            }),
            v => Ok(v),
        }
    }

    fn finish(self) -> Result<(), EnvError> {
        match self.params.into_keys().next() {
            Some(k) => Err(EnvError::UnknownParam(k)),
            None => Ok(()),
        }
    }
}

/// Per-sub-environment dynamics driven by [`VecEnv`].
pub(crate) trait Kernel: Send {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize {
        self.state_dim()
    }
    fn observation_space(&self) -> Space;
    fn action_space(&self) -> Space;
    fn reset_state(&self, rng: &mut ChaCha8Rng, state: &mut [f64]);
    fn observe(&self, state: &[f64], obs: &mut [f64]);
    /// Advances one step, returning `(reward, terminated)`.
    fn step_state(&self, state: &mut [f64], action: &[f64]) -> (f64, bool);
    fn max_episode_steps(&self) -> Option<usize>;
    fn echoes_actions(&self) -> bool {
        false
    }
}

/// Extra per-row outputs of a step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Info {
    entries: Vec<(String, Vec<f64>)>,
}

impl Info {
    pub fn insert(&mut self, key: &str, value: Vec<f64>) {
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Batch,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub infos: Vec<Info>,
}

impl StepResult {
    pub fn truncated(&self, row: usize) -> bool {
        self.infos[row].get(TRUNCATED).is_some()
    }

    /// Episode ended by the task itself rather than the time limit.
    pub fn terminated(&self, row: usize) -> bool {
        self.dones[row] && !self.truncated(row)
    }

    /// The observation that ended row `row`'s episode, or the current one.
    pub fn final_observation(&self, row: usize) -> &[f64] {
        self.infos[row]
            .get(TERMINAL_OBSERVATION)
            .unwrap_or_else(|| self.observations.row(row))
    }

    /// Observations with finished rows replaced by their terminal observation.
    pub fn next_observations(&self) -> Batch {
        let mut b = self.observations.clone();
        for (i, info) in self.infos.iter().enumerate() {
            if let Some(t) = info.get(TERMINAL_OBSERVATION) {
                b.row_mut(i).copy_from_slice(t);
            }
        }
        b
    }
}

pub(crate) trait Backend: Send {
    fn reset(&mut self) -> Result<Batch, EnvError>;
    fn step(&mut self, actions: &Batch) -> Result<StepResult, EnvError>;
    fn state(&self, _row: usize) -> Option<Vec<f64>> {
        None
    }
    fn set_state(&mut self, _row: usize, _state: &[f64]) -> Result<(), EnvError> {
        Err(EnvError::Malformed("backend has no settable state".into()))
    }
}

struct KernelBatch {
    kernel: Box<dyn Kernel>,
    num_envs: usize,
    states: Vec<f64>,
    steps: Vec<usize>,
    rng: ChaCha8Rng,
}

impl KernelBatch {
    fn observe_all(&self) -> Batch {
        let (sd, od) = (self.kernel.state_dim(), self.kernel.obs_dim());
        let mut obs = Batch::zeros(self.num_envs, od);
        for i in 0..self.num_envs {
            self.kernel.observe(&self.states[i * sd..(i + 1) * sd], obs.row_mut(i));
        }
        obs
    }
}

impl Backend for KernelBatch {
    fn reset(&mut self) -> Result<Batch, EnvError> {
        let sd = self.kernel.state_dim();
        for i in 0..self.num_envs {
            self.kernel.reset_state(&mut self.rng, &mut self.states[i * sd..(i + 1) * sd]);
            self.steps[i] = 0;
        }
        Ok(self.observe_all())
    }

    fn step(&mut self, actions: &Batch) -> Result<StepResult, EnvError> {
        let (sd, od) = (self.kernel.state_dim(), self.kernel.obs_dim());
        let limit = self.kernel.max_episode_steps();
        let mut observations = Batch::zeros(self.num_envs, od);
        let mut rewards = Vec::with_capacity(self.num_envs);
        let mut dones = Vec::with_capacity(self.num_envs);
        let mut infos = vec![Info::default(); self.num_envs];
        for i in 0..self.num_envs {
            let state = &mut self.states[i * sd..(i + 1) * sd];
            let action = actions.row(i);
            let (reward, terminated) = self.kernel.step_state(state, action);
            self.steps[i] += 1;
            let truncated = !terminated && limit.is_some_and(|l| self.steps[i] >= l);
            let obs = observations.row_mut(i);
            self.kernel.observe(state, obs);
            if self.kernel.echoes_actions() {
                infos[i].insert(ACTION, action.to_vec());
            }
            if terminated || truncated {
                infos[i].insert(TERMINAL_OBSERVATION, obs.to_vec());
                if truncated {
                    infos[i].insert(TRUNCATED, vec![1.0]);
                }
                self.kernel.reset_state(&mut self.rng, state);
                self.kernel.observe(state, obs);
                self.steps[i] = 0;
            }
            rewards.push(reward);
            dones.push(terminated || truncated);
        }
        Ok(StepResult {
            observations,
            rewards,
            dones,
            infos,
        })
    }

    fn state(&self, row: usize) -> Option<Vec<f64>> {
        let sd = self.kernel.state_dim();
        (row < self.num_envs).then(|| self.states[row * sd..(row + 1) * sd].to_vec())
    }

    fn set_state(&mut self, row: usize, state: &[f64]) -> Result<(), EnvError> {
        let sd = self.kernel.state_dim();
        if row >= self.num_envs {
            return Err(EnvError::Row(row));
        }
        if state.len() != sd {
            return Err(EnvError::Malformed(format!("state has {} values, expected {sd}", state.len())));
        }
        self.states[row * sd..(row + 1) * sd].copy_from_slice(state);
        Ok(())
    }
}

/// Batch of `num_envs` sub-environments behind one reset/step interface.
pub struct VecEnv {
    name: String,
    num_envs: usize,
    device: String,
    observation_space: Space,
    action_space: Space,
    params: EnvParams,
    backend: Box<dyn Backend>,
}

impl std::fmt::Debug for VecEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VecEnv")
            .field("name", &self.name)
            .field("num_envs", &self.num_envs)
            .field("device", &self.device)
            .field("observation_space", &self.observation_space)
            .field("action_space", &self.action_space)
            .finish()
    }
}

/// Builds one of the in-repo environments.
pub fn make_env(name: &str, num_envs: usize, seed: u64, params: &EnvParams) -> Result<VecEnv, EnvError> {
    if num_envs == 0 {
        return Err(EnvError::NoEnvs);
    }
    let mut reader = ParamReader::new(params);
    let kernel: Box<dyn Kernel> = match name {
        "cartpole" => Box::new(cartpole::CartPole::from_params(&mut reader)?),
        "pendulum" => Box::new(pendulum::Pendulum::from_params(&mut reader)?),
        "gridworld" => Box::new(gridworld::GridWorld::from_params(&mut reader)?),
        "echo" => Box::new(echo::Echo::from_params(&mut reader)?),
        other => return Err(EnvError::UnknownEnv(other.to_string())),
    };
    reader.finish()?;
    let sd = kernel.state_dim();
    Ok(VecEnv {
        name: name.to_string(),
        num_envs,
        device: "cpu".into(),
        observation_space: kernel.observation_space(),
        action_space: kernel.action_space(),
        params: params.clone(),
        backend: Box::new(KernelBatch {
            kernel,
            num_envs,
            states: vec![0.0; num_envs * sd],
            steps: vec![0; num_envs],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }),
    })
}

impl VecEnv {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_envs(&self) -> usize {
        self.num_envs
    }

    /// Informational device label.
    pub fn device(&self) -> &str {
        &self.device
    }

    pub fn observation_space(&self) -> &Space {
        &self.observation_space
    }

    pub fn action_space(&self) -> &Space {
        &self.action_space
    }

    /// Parameters the environment was built with.
    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn reset(&mut self) -> Result<Batch, EnvError> {
        self.backend.reset()
    }

    pub fn step(&mut self, actions: &Batch) -> Result<StepResult, EnvError> {
        let expected_cols = self.action_space.dim();
        if actions.rows() != self.num_envs || actions.cols() != expected_cols {
            return Err(EnvError::ActionShape {
                rows: actions.rows(),
                cols: actions.cols(),
                expected_rows: self.num_envs,
                expected_cols,
            });
        }
        if let Space::Discrete { n } = self.action_space {
            for (row, a) in actions.iter_rows().enumerate() {
                if !self.action_space.contains(a) {
                    return Err(EnvError::ActionRange { row, value: a[0], n });
                }
            }
        }
        self.backend.step(actions)
    }

    /// Internal state of one sub-environment, when the backend exposes it.
    pub fn state(&self, row: usize) -> Option<Vec<f64>> {
        self.backend.state(row)
    }

    /// Overwrites one sub-environment's internal state (test and analysis hook).
    pub fn set_state(&mut self, row: usize, state: &[f64]) -> Result<(), EnvError> {
        self.backend.set_state(row, state)
    }
}

#[cfg(test)]
mod tests;
