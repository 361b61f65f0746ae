use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::util::{linear_schedule, load_scalar, require_discrete, scalar};
use super::{Agent, AgentError, AgentKind, Metrics, StepInfo, TabularConfig, Transition};
use crate::batch::Batch;
use crate::env::Space;
use crate::model::{instantiate_model, tabular_act, Activation, HeadKind, Model, ModelError, ModelSpec, QTable};
use crate::tensor::Tensor;

fn check_action(table: &QTable, a: usize) -> Result<(), ModelError> {
    if a >= table.num_actions() {
        return Err(ModelError::Spec(format!(
            "action {a} out of range for {} actions",
            table.num_actions()
        )));
    }
    Ok(())
}

/// `Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') * (1 - done) - Q(s,a))`.
/// Returns the updated value.
#[allow(clippy::too_many_arguments)]
pub fn qlearning_update(
    table: &mut QTable,
    s: usize,
    a: usize,
    r: f64,
    s_next: usize,
    done: bool,
    alpha: f64,
    gamma: f64,
) -> Result<f64, ModelError> {
    check_action(table, a)?;
    let bootstrap = if done { 0.0 } else { table.max_value(s_next)? };
    let q = table.get(s, a)?;
    let updated = q + alpha * (r + gamma * bootstrap - q);
    table.set(s, a, updated)?;
    Ok(updated)
}

/// `Q(s,a) += alpha * (r + gamma * Q(s',a') * (1 - done) - Q(s,a))`.
/// Returns the updated value.
#[allow(clippy::too_many_arguments)]
pub fn sarsa_update(
    table: &mut QTable,
    s: usize,
    a: usize,
    r: f64,
    s_next: usize,
    a_next: usize,
    done: bool,
    alpha: f64,
    gamma: f64,
) -> Result<f64, ModelError> {
    check_action(table, a)?;
    check_action(table, a_next)?;
    let bootstrap = if done { 0.0 } else { table.get(s_next, a_next)? };
    let q = table.get(s, a)?;
    let updated = q + alpha * (r + gamma * bootstrap - q);
    table.set(s, a, updated)?;
    Ok(updated)
}

/// Q-learning or SARSA over a discrete observation space.
///
/// SARSA bootstraps from the action actually taken next, so a row's update
/// waits for the following `act` call unless the episode ended.
pub struct TabularAgent {
    kind: AgentKind,
    cfg: TabularConfig,
    model: Model,
    num_envs: usize,
    spaces: (Space, Space),
    rng: ChaCha8Rng,
    epsilon: f64,
    /// SARSA `(s, a, r)` awaiting the next action, per row.
    pending: Vec<Option<(usize, usize, f64)>>,
    updates: u64,
}

fn state_index(row: &[f64]) -> usize {
    row[0] as usize
}

impl TabularAgent {
    pub fn new(
        kind: AgentKind,
        cfg: &TabularConfig,
        observation_space: &Space,
        action_space: &Space,
        num_envs: usize,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let num_states = observation_space.n().ok_or_else(|| AgentError::Space {
            kind,
            what: "a continuous observation".into(),
        })?;
        let num_actions = require_discrete(kind, action_space)?;
        let spec = ModelSpec::new(num_states, num_actions, &[], Activation::Tanh);
        Ok(Self {
            kind,
            cfg: cfg.clone(),
            model: instantiate_model(&spec, HeadKind::Tabular, seed)?,
            num_envs,
            spaces: (observation_space.clone(), action_space.clone()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            epsilon: cfg.epsilon_start,
            pending: vec![None; num_envs],
            updates: 0,
        })
    }

    pub fn q_table(&self) -> &QTable {
        self.model.q_table().expect("tabular model")
    }

    fn table(&mut self) -> &mut QTable {
        self.model.q_table_mut().expect("tabular model")
    }

    fn sarsa(&mut self, s: usize, a: usize, r: f64, s2: usize, a2: usize, done: bool) -> Result<(), AgentError> {
        let (alpha, gamma) = (self.cfg.learning_rate, self.cfg.discount);
        sarsa_update(self.table(), s, a, r, s2, a2, done, alpha, gamma)?;
        self.updates += 1;
        Ok(())
    }
}

impl Agent for TabularAgent {
    fn kind(&self) -> AgentKind {
        self.kind
    }

    fn num_envs(&self) -> usize {
        self.num_envs
    }

    fn observation_space(&self) -> &Space {
        &self.spaces.0
    }

    fn action_space(&self) -> &Space {
        &self.spaces.1
    }

    fn act(&mut self, states: &Batch, step: StepInfo) -> Result<Batch, AgentError> {
        let horizon = (self.cfg.exploration_fraction * step.total_timesteps as f64) as usize;
        self.epsilon = linear_schedule(self.cfg.epsilon_start, self.cfg.epsilon_end, step.timestep, horizon);
        let idx: Vec<usize> = states.iter_rows().map(state_index).collect();
        let actions = tabular_act(&self.model, &idx, self.epsilon, &mut self.rng)?;
        if self.kind == AgentKind::Sarsa {
            for row in 0..self.pending.len() {
                if let Some((s, a, r)) = self.pending[row].take() {
                    self.sarsa(s, a, r, idx[row], actions[row], false)?;
                }
            }
        }
        Ok(Batch::column(actions.into_iter().map(|a| a as f64).collect()))
    }

    fn record_transition(&mut self, t: &Transition<'_>, _step: StepInfo) -> Result<(), AgentError> {
        for row in 0..t.rewards.len() {
            let s = state_index(t.states.row(row));
            let a = t.actions.row(row)[0] as usize;
            let s2 = state_index(t.next_states.row(row));
            let r = t.rewards[row];
            let done = t.terminated[row];
            match self.kind {
                AgentKind::Sarsa if done => self.sarsa(s, a, r, s2, 0, true)?,
                AgentKind::Sarsa if t.truncated[row] => {
                    // the episode was cut; bootstrap from the policy's action at the final state
                    let a2 = tabular_act(&self.model, &[s2], self.epsilon, &mut self.rng)?[0];
                    self.sarsa(s, a, r, s2, a2, false)?;
                }
                AgentKind::Sarsa => self.pending[row] = Some((s, a, r)),
                _ => {
                    let (alpha, gamma) = (self.cfg.learning_rate, self.cfg.discount);
                    qlearning_update(self.table(), s, a, r, s2, done, alpha, gamma)?;
                    self.updates += 1;
                }
            }
        }
        Ok(())
    }

    fn post_interaction(&mut self, _step: StepInfo) -> Result<Metrics, AgentError> {
        Ok(vec![("epsilon", self.epsilon)])
    }

    fn eval_act(&mut self, states: &Batch) -> Result<Batch, AgentError> {
        let table = self.q_table();
        let actions = states
            .iter_rows()
            .map(|r| table.greedy(state_index(r)).map(|a| a as f64))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Batch::column(actions))
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.model.named_tensors("q");
        out.push(scalar("updates", self.updates as f64));
        out
    }

    fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<(), AgentError> {
        self.model.load_named(tensors, "q")?;
        self.updates = load_scalar(tensors, "updates")? as u64;
        Ok(())
    }

    fn parameters_finite(&self) -> bool {
        self.q_table().values().iter().all(|v| v.is_finite())
    }
}
