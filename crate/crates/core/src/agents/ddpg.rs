use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::util::{
    build_model, clip_to, flat, load_scalar, mse, random_actions, record_replay, replay_memory, require_box,
    sample_replay, scalar, state_action, stored, Trained,
};
use super::{Agent, AgentError, AgentKind, DdpgConfig, Metrics, StepInfo, Transition};
use crate::batch::Batch;
use crate::env::Space;
use crate::memory::SharedMemory;
use crate::model::{deterministic_act, polyak_update, HeadKind, Model};
use crate::noise::Noise;
use crate::tensor::{no_grad, Tensor};

/// Critic targets `y = r + gamma * (1 - done) * Q'(s', mu'(s'))`.
pub fn ddpg_targets(rewards: &[f64], terminated: &[f64], q_next: &[f64], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(terminated)
        .zip(q_next)
        .map(|((r, d), q)| r + gamma * (1.0 - d) * q)
        .collect()
}

pub struct DdpgAgent {
    cfg: DdpgConfig,
    actor: Trained,
    actor_target: Model,
    critic: Trained,
    critic_target: Model,
    memory: SharedMemory,
    action_space: Space,
    noise: Noise,
    num_envs: usize,
    spaces: (Space, Space),
    rng: ChaCha8Rng,
    recorded: usize,
    updates: u64,
}

impl DdpgAgent {
    pub fn new(
        cfg: &DdpgConfig,
        observation_space: &Space,
        action_space: &Space,
        num_envs: usize,
        memory: Option<SharedMemory>,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let bounds = require_box(AgentKind::Ddpg, action_space)?;
        let (obs_dim, act_dim) = (observation_space.dim(), action_space.dim());
        let actor = build_model(&cfg.actor, obs_dim, act_dim, Some(bounds), HeadKind::Deterministic, seed)?;
        let critic = build_model(&cfg.critic, obs_dim + act_dim, 1, None, HeadKind::Deterministic, seed + 1)?;
        Ok(Self {
            cfg: cfg.clone(),
            actor_target: actor.frozen(),
            critic_target: critic.frozen(),
            actor: Trained::new(actor, cfg.actor_learning_rate),
            critic: Trained::new(critic, cfg.critic_learning_rate),
            memory: replay_memory(memory, cfg.memory_size, num_envs, obs_dim, act_dim, seed ^ 0x3e30)?,
            action_space: action_space.clone(),
            noise: Noise::from_config(&cfg.exploration_noise, num_envs * act_dim)?,
            num_envs,
            spaces: (observation_space.clone(), action_space.clone()),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xac7),
            recorded: 0,
            updates: 0,
        })
    }

    pub fn actor(&self) -> &Model {
        &self.actor.model
    }

    pub fn critic(&self) -> &Model {
        &self.critic.model
    }

    fn learning_starts(&self) -> usize {
        self.cfg.learning_starts.unwrap_or(self.cfg.batch_size)
    }

    fn update(&mut self) -> Result<(f64, f64), AgentError> {
        let b = sample_replay(&self.memory, self.cfg.batch_size)?;
        let q_next = no_grad(|| -> Result<Tensor, AgentError> {
            let next = b.next_states.to_tensor();
            let a_next = deterministic_act(&self.actor_target, &b.next_states)?;
            Ok(self.critic_target.forward(&state_action(&next, &a_next)?)?)
        })?;
        let y = ddpg_targets(&b.rewards, &b.terminated, q_next.data(), self.cfg.discount);

        let states = b.states.to_tensor();
        let q = flat(&self.critic.model.forward(&state_action(&states, &b.actions.to_tensor())?)?)?;
        let critic_loss = mse(&q, &Tensor::from_vec(y))?;
        let grads = critic_loss.backward()?;
        self.critic.apply(&grads, None)?;

        let critic = self.critic.model.frozen();
        let a = deterministic_act(&self.actor.model, &b.states)?;
        let actor_loss = critic.forward(&state_action(&states, &a)?)?.mean()?.neg();
        let grads = actor_loss.backward()?;
        self.actor.apply(&grads, None)?;

        polyak_update(&mut self.actor_target, &self.actor.model, self.cfg.polyak)?;
        polyak_update(&mut self.critic_target, &self.critic.model, self.cfg.polyak)?;
        self.updates += 1;
        Ok((critic_loss.item(), actor_loss.item()))
    }
}

impl Agent for DdpgAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Ddpg
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

    fn act(&mut self, states: &Batch, _step: StepInfo) -> Result<Batch, AgentError> {
        if self.recorded < self.learning_starts() {
            return Ok(random_actions(&self.action_space, states.rows(), &mut self.rng));
        }
        let a = no_grad(|| deterministic_act(&self.actor.model, states))?;
        let mut actions = Batch::from_tensor(&a)?;
        let noise = self.noise.sample(actions.data().len(), &mut self.rng);
        for (x, n) in actions.data_mut().iter_mut().zip(noise) {
            *x += n;
        }
        clip_to(&self.action_space, &mut actions);
        Ok(actions)
    }

    fn record_transition(&mut self, t: &Transition<'_>, _step: StepInfo) -> Result<(), AgentError> {
        record_replay(&self.memory, t)?;
        self.recorded += t.rewards.len();
        Ok(())
    }

    fn post_interaction(&mut self, _step: StepInfo) -> Result<Metrics, AgentError> {
        if self.recorded < self.learning_starts() || stored(&self.memory) < self.cfg.batch_size {
            return Ok(Vec::new());
        }
        let mut losses = (0.0, 0.0);
        for _ in 0..self.cfg.gradient_steps {
            losses = self.update()?;
        }
        Ok(vec![("critic_loss", losses.0), ("policy_loss", losses.1)])
    }

    fn eval_act(&mut self, states: &Batch) -> Result<Batch, AgentError> {
        let a = no_grad(|| deterministic_act(&self.actor.model, states))?;
        Ok(Batch::from_tensor(&a)?)
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.actor.named_tensors("policy");
        out.extend(self.actor_target.named_tensors("target_policy"));
        out.extend(self.critic.named_tensors("critic"));
        out.extend(self.critic_target.named_tensors("target_critic"));
        out.push(scalar("updates", self.updates as f64));
        out.push(scalar("recorded", self.recorded as f64));
        out
    }

    fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<(), AgentError> {
        self.actor.load_named(tensors, "policy")?;
        self.actor_target.load_named(tensors, "target_policy")?;
        self.critic.load_named(tensors, "critic")?;
        self.critic_target.load_named(tensors, "target_critic")?;
        self.updates = load_scalar(tensors, "updates")? as u64;
        self.recorded = load_scalar(tensors, "recorded")? as usize;
        Ok(())
    }

    fn parameters_finite(&self) -> bool {
        super::util::finite(&[&self.actor.model, &self.actor_target, &self.critic.model, &self.critic_target])
    }
}
