use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::util::{
    build_model, clip_to, flat, load_scalar, mse, random_actions, record_replay, replay_memory, require_box,
    sample_replay, scalar, state_action, stored, Trained,
};
use super::{Agent, AgentError, AgentKind, Metrics, StepInfo, Td3Config, Transition};
use crate::batch::Batch;
use crate::env::Space;
use crate::memory::SharedMemory;
use crate::model::{deterministic_act, polyak_update, HeadKind, Model};
use crate::noise::{gaussian_sample, Noise};
use crate::tensor::{no_grad, Tensor};

/// Target-policy smoothing noise clipped to `[-clip, clip]`.
pub fn clip_smoothing_noise(eps: f64, clip: f64) -> f64 {
    eps.clamp(-clip, clip)
}

/// Twin-critic targets `y = r + gamma * (1 - done) * min(Q1', Q2')`.
pub fn td3_targets(rewards: &[f64], terminated: &[f64], q1_next: &[f64], q2_next: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|i| rewards[i] + gamma * (1.0 - terminated[i]) * q1_next[i].min(q2_next[i]))
        .collect()
}

pub struct Td3Agent {
    cfg: Td3Config,
    actor: Trained,
    actor_target: Model,
    critic1: Trained,
    critic2: Trained,
    critic1_target: Model,
    critic2_target: Model,
    memory: SharedMemory,
    action_space: Space,
    noise: Noise,
    num_envs: usize,
    spaces: (Space, Space),
    rng: ChaCha8Rng,
    recorded: usize,
    critic_updates: u64,
    actor_updates: u64,
    last_actor_loss: f64,
}

impl Td3Agent {
    pub fn new(
        cfg: &Td3Config,
        observation_space: &Space,
        action_space: &Space,
        num_envs: usize,
        memory: Option<SharedMemory>,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let bounds = require_box(AgentKind::Td3, action_space)?;
        let (obs_dim, act_dim) = (observation_space.dim(), action_space.dim());
        let actor = build_model(&cfg.actor, obs_dim, act_dim, Some(bounds), HeadKind::Deterministic, seed)?;
        let c1 = build_model(&cfg.critic, obs_dim + act_dim, 1, None, HeadKind::Deterministic, seed + 1)?;
        let c2 = build_model(&cfg.critic, obs_dim + act_dim, 1, None, HeadKind::Deterministic, seed + 2)?;
        Ok(Self {
            cfg: cfg.clone(),
            actor_target: actor.frozen(),
            critic1_target: c1.frozen(),
            critic2_target: c2.frozen(),
            actor: Trained::new(actor, cfg.actor_learning_rate),
            critic1: Trained::new(c1, cfg.critic_learning_rate),
            critic2: Trained::new(c2, cfg.critic_learning_rate),
            memory: replay_memory(memory, cfg.memory_size, num_envs, obs_dim, act_dim, seed ^ 0x3e30)?,
            action_space: action_space.clone(),
            noise: Noise::from_config(&cfg.exploration_noise, num_envs * act_dim)?,
            num_envs,
            spaces: (observation_space.clone(), action_space.clone()),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xac7),
            recorded: 0,
            critic_updates: 0,
            actor_updates: 0,
            last_actor_loss: 0.0,
        })
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    fn learning_starts(&self) -> usize {
        self.cfg.learning_starts.unwrap_or(self.cfg.batch_size)
    }

    fn update(&mut self) -> Result<f64, AgentError> {
        let b = sample_replay(&self.memory, self.cfg.batch_size)?;
        let (lo, hi) = self.action_space.bounds().expect("box actions");
        let d = lo.len();
        let eps = gaussian_sample(b.actions.data().len(), 0.0, self.cfg.smooth_noise_std, &mut self.rng)?;
        let (q1n, q2n) = no_grad(|| -> Result<(Tensor, Tensor), AgentError> {
            let next = b.next_states.to_tensor();
            let mut a_next = Batch::from_tensor(&deterministic_act(&self.actor_target, &b.next_states)?)?;
            for (i, (a, e)) in a_next.data_mut().iter_mut().zip(&eps).enumerate() {
                *a = (*a + clip_smoothing_noise(*e, self.cfg.smooth_noise_clip)).clamp(lo[i % d], hi[i % d]);
            }
            let sa = state_action(&next, &a_next.to_tensor())?;
            Ok((self.critic1_target.forward(&sa)?, self.critic2_target.forward(&sa)?))
        })?;
        let y = Tensor::from_vec(td3_targets(
            &b.rewards,
            &b.terminated,
            q1n.data(),
            q2n.data(),
            self.cfg.discount,
        ));

        let states = b.states.to_tensor();
        let sa = state_action(&states, &b.actions.to_tensor())?;
        let q1 = flat(&self.critic1.model.forward(&sa)?)?;
        let q2 = flat(&self.critic2.model.forward(&sa)?)?;
        let critic_loss = mse(&q1, &y)?.add(&mse(&q2, &y)?)?;
        let grads = critic_loss.backward()?;
        self.critic1.apply(&grads, None)?;
        self.critic2.apply(&grads, None)?;
        self.critic_updates += 1;

        if self.critic_updates % self.cfg.policy_delay as u64 == 0 {
            let critic = self.critic1.model.frozen();
            let a = deterministic_act(&self.actor.model, &b.states)?;
            let actor_loss = critic.forward(&state_action(&states, &a)?)?.mean()?.neg();
            let grads = actor_loss.backward()?;
            self.actor.apply(&grads, None)?;
            self.actor_updates += 1;
            self.last_actor_loss = actor_loss.item();
            polyak_update(&mut self.actor_target, &self.actor.model, self.cfg.polyak)?;
            polyak_update(&mut self.critic1_target, &self.critic1.model, self.cfg.polyak)?;
            polyak_update(&mut self.critic2_target, &self.critic2.model, self.cfg.polyak)?;
        }
        Ok(critic_loss.item())
    }
}

impl Agent for Td3Agent {
    fn kind(&self) -> AgentKind {
        AgentKind::Td3
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
        let mut critic_loss = 0.0;
        for _ in 0..self.cfg.gradient_steps {
            critic_loss = self.update()?;
        }
        Ok(vec![("critic_loss", critic_loss), ("policy_loss", self.last_actor_loss)])
    }

    fn eval_act(&mut self, states: &Batch) -> Result<Batch, AgentError> {
        let a = no_grad(|| deterministic_act(&self.actor.model, states))?;
        Ok(Batch::from_tensor(&a)?)
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.actor.named_tensors("policy");
        out.extend(self.actor_target.named_tensors("target_policy"));
        out.extend(self.critic1.named_tensors("critic_1"));
        out.extend(self.critic2.named_tensors("critic_2"));
        out.extend(self.critic1_target.named_tensors("target_critic_1"));
        out.extend(self.critic2_target.named_tensors("target_critic_2"));
        out.push(scalar("critic_updates", self.critic_updates as f64));
        out.push(scalar("actor_updates", self.actor_updates as f64));
        out.push(scalar("recorded", self.recorded as f64));
        out
    }

    fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<(), AgentError> {
        self.actor.load_named(tensors, "policy")?;
        self.actor_target.load_named(tensors, "target_policy")?;
        self.critic1.load_named(tensors, "critic_1")?;
        self.critic2.load_named(tensors, "critic_2")?;
        self.critic1_target.load_named(tensors, "target_critic_1")?;
        self.critic2_target.load_named(tensors, "target_critic_2")?;
        self.critic_updates = load_scalar(tensors, "critic_updates")? as u64;
        self.actor_updates = load_scalar(tensors, "actor_updates")? as u64;
        self.recorded = load_scalar(tensors, "recorded")? as usize;
        Ok(())
    }

    fn parameters_finite(&self) -> bool {
        super::util::finite(&[
            &self.actor.model,
            &self.actor_target,
            &self.critic1.model,
            &self.critic2.model,
            &self.critic1_target,
            &self.critic2_target,
        ])
    }
}
