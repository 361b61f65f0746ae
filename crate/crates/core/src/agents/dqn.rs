use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::util::{
    build_model, huber, linear_schedule, load_scalar, mse, random_actions, record_replay, replay_memory,
    require_discrete, sample_replay, scalar, stored, Trained,
};
use super::{Agent, AgentError, AgentKind, DqnConfig, Metrics, StepInfo, Transition};
use crate::batch::Batch;
use crate::env::Space;
use crate::memory::SharedMemory;
use crate::model::{polyak_update, HeadKind, Model};
use crate::tensor::{no_grad, Tensor};

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Bootstrap targets `y = r + gamma * (1 - done) * Q_target(s', a*)`.
///
/// `a*` maximizes `q_target_next` for DQN and `q_online_next` for double DQN.
pub fn dqn_targets(
    rewards: &[f64],
    terminated: &[f64],
    q_target_next: &Batch,
    q_online_next: &Batch,
    gamma: f64,
    double: bool,
) -> Vec<f64> {
    (0..rewards.len())
        .map(|i| {
            let tq = q_target_next.row(i);
            let a = if double {
                argmax(q_online_next.row(i))
            } else {
                argmax(tq)
            };
            rewards[i] + gamma * (1.0 - terminated[i]) * tq[a]
        })
        .collect()
}

/// DQN, or double DQN when `double` is set.
pub struct DqnAgent {
    double: bool,
    cfg: DqnConfig,
    q: Trained,
    target: Model,
    memory: SharedMemory,
    action_space: Space,
    num_envs: usize,
    spaces: (Space, Space),
    rng: ChaCha8Rng,
    epsilon: f64,
    recorded: usize,
    updates: u64,
}

impl DqnAgent {
    pub fn new(
        double: bool,
        cfg: &DqnConfig,
        observation_space: &Space,
        action_space: &Space,
        num_envs: usize,
        memory: Option<SharedMemory>,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let kind = if double { AgentKind::Ddqn } else { AgentKind::Dqn };
        let n = require_discrete(kind, action_space)?;
        let obs_dim = observation_space.dim();
        let model = build_model(&cfg.q_network, obs_dim, n, None, HeadKind::Deterministic, seed)?;
        let target = model.frozen();
        let memory = replay_memory(memory, cfg.memory_size, num_envs, obs_dim, 1, seed ^ 0x3e30)?;
        Ok(Self {
            double,
            cfg: cfg.clone(),
            q: Trained::new(model, cfg.learning_rate),
            target,
            memory,
            action_space: action_space.clone(),
            num_envs,
            spaces: (observation_space.clone(), action_space.clone()),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xac7),
            epsilon: cfg.epsilon_start,
            recorded: 0,
            updates: 0,
        })
    }

    pub fn q_network(&self) -> &Model {
        &self.q.model
    }

    fn learning_starts(&self) -> usize {
        self.cfg.learning_starts.unwrap_or(self.cfg.batch_size)
    }

    fn greedy(&self, states: &Batch) -> Result<Vec<usize>, AgentError> {
        let q = no_grad(|| self.q.model.forward(&states.to_tensor()))?;
        let n = q.shape()[1];
        Ok(q.data().chunks(n).map(argmax).collect())
    }

    fn update(&mut self) -> Result<f64, AgentError> {
        let b = sample_replay(&self.memory, self.cfg.batch_size)?;
        let next = b.next_states.to_tensor();
        let (tq, oq) = no_grad(|| -> Result<_, AgentError> {
            let tq = Batch::from_tensor(&self.target.forward(&next)?)?;
            let oq = if self.double {
                Batch::from_tensor(&self.q.model.forward(&next)?)?
            } else {
                tq.clone()
            };
            Ok((tq, oq))
        })?;
        let y = dqn_targets(&b.rewards, &b.terminated, &tq, &oq, self.cfg.discount, self.double);
        let actions: Vec<usize> = b.actions.data().iter().map(|&a| a as usize).collect();
        let q = self.q.model.forward(&b.states.to_tensor())?.gather_rows(&actions)?;
        let y = Tensor::from_vec(y);
        let loss = if self.cfg.huber { huber(&q, &y)? } else { mse(&q, &y)? };
        let grads = loss.backward()?;
        self.q.apply(&grads, self.cfg.max_grad_norm)?;
        self.updates += 1;
        Ok(loss.item())
    }
}

impl Agent for DqnAgent {
    fn kind(&self) -> AgentKind {
        if self.double {
            AgentKind::Ddqn
        } else {
            AgentKind::Dqn
        }
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

    fn memory(&self) -> Option<SharedMemory> {
        Some(self.memory.clone())
    }

    fn act(&mut self, states: &Batch, step: StepInfo) -> Result<Batch, AgentError> {
        self.epsilon = linear_schedule(
            self.cfg.epsilon_start,
            self.cfg.epsilon_end,
            step.timestep,
            self.cfg.exploration_steps,
        );
        if self.recorded < self.learning_starts() {
            return Ok(random_actions(&self.action_space, states.rows(), &mut self.rng));
        }
        let greedy = self.greedy(states)?;
        let n = self.action_space.n().expect("discrete");
        let actions = greedy
            .into_iter()
            .map(|g| {
                if self.rng.gen::<f64>() < self.epsilon {
                    self.rng.gen_range(0..n) as f64
                } else {
                    g as f64
                }
            })
            .collect();
        Ok(Batch::column(actions))
    }

    fn record_transition(&mut self, t: &Transition<'_>, _step: StepInfo) -> Result<(), AgentError> {
        record_replay(&self.memory, t)?;
        self.recorded += t.rewards.len();
        Ok(())
    }

    fn post_interaction(&mut self, step: StepInfo) -> Result<Metrics, AgentError> {
        if self.recorded < self.learning_starts() || stored(&self.memory) < self.cfg.batch_size {
            return Ok(Vec::new());
        }
        if let Some(final_lr) = self.cfg.final_learning_rate {
            self.q.opt.learning_rate =
                linear_schedule(self.cfg.learning_rate, final_lr, step.timestep, step.total_timesteps);
        }
        let mut loss = 0.0;
        for _ in 0..self.cfg.gradient_steps {
            loss = self.update()?;
        }
        if (step.timestep + 1) % self.cfg.target_update_interval == 0 {
            polyak_update(&mut self.target, &self.q.model, 1.0)?;
        }
        Ok(vec![
            ("q_loss", loss),
            ("epsilon", self.epsilon),
            ("learning_rate", self.q.opt.learning_rate),
        ])
    }

    fn eval_act(&mut self, states: &Batch) -> Result<Batch, AgentError> {
        Ok(Batch::column(self.greedy(states)?.into_iter().map(|a| a as f64).collect()))
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.q.named_tensors("q_network");
        out.extend(self.target.named_tensors("target_q_network"));
        out.push(scalar("updates", self.updates as f64));
        out.push(scalar("recorded", self.recorded as f64));
        out
    }

    fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<(), AgentError> {
        self.q.load_named(tensors, "q_network")?;
        self.target.load_named(tensors, "target_q_network")?;
        self.updates = load_scalar(tensors, "updates")? as u64;
        self.recorded = load_scalar(tensors, "recorded")? as usize;
        Ok(())
    }

    fn parameters_finite(&self) -> bool {
        super::util::finite(&[&self.q.model, &self.target])
    }
}
