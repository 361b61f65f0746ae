use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::util::{
    build_model, flat, load_optim, load_scalar, mse, optim_tensors, random_actions, record_replay, replay_memory,
    require_box, sample_replay, scalar, state_action, stored, Trained,
};
use super::{Agent, AgentError, AgentKind, Metrics, SacConfig, StepInfo, Transition};
use crate::batch::Batch;
use crate::env::Space;
use crate::memory::SharedMemory;
use crate::model::{polyak_update, squashed_gaussian_act, HeadKind, Model};
use crate::tensor::optim::{adam_step, AdamConfig, OptimState};
use crate::tensor::{checkpoint, no_grad, Tensor};

/// Soft targets `y = r + gamma * (1 - done) * (min(Q1', Q2') - alpha * log pi(a'|s'))`.
pub fn sac_targets(
    rewards: &[f64],
    terminated: &[f64],
    q1_next: &[f64],
    q2_next: &[f64],
    next_log_probs: &[f64],
    alpha: f64,
    gamma: f64,
) -> Vec<f64> {
    (0..rewards.len())
        .map(|i| {
            let soft = q1_next[i].min(q2_next[i]) - alpha * next_log_probs[i];
            rewards[i] + gamma * (1.0 - terminated[i]) * soft
        })
        .collect()
}

/// `-log_alpha * mean(log_probs + target_entropy)`; its gradient with respect
/// to `log_alpha` is negative when the policy entropy is below target.
pub fn temperature_loss(log_alpha: &Tensor, log_probs: &[f64], target_entropy: f64) -> Tensor {
    let m = log_probs.iter().map(|l| l + target_entropy).sum::<f64>() / log_probs.len() as f64;
    log_alpha.scale(-m)
}

pub struct SacAgent {
    cfg: SacConfig,
    actor: Trained,
    critic1: Trained,
    critic2: Trained,
    critic1_target: Model,
    critic2_target: Model,
    log_alpha: Tensor,
    alpha_opt: OptimState,
    target_entropy: f64,
    memory: SharedMemory,
    action_space: Space,
    num_envs: usize,
    spaces: (Space, Space),
    rng: ChaCha8Rng,
    recorded: usize,
    updates: u64,
}

impl SacAgent {
    pub fn new(
        cfg: &SacConfig,
        observation_space: &Space,
        action_space: &Space,
        num_envs: usize,
        memory: Option<SharedMemory>,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let bounds = require_box(AgentKind::Sac, action_space)?;
        let (obs_dim, act_dim) = (observation_space.dim(), action_space.dim());
        let actor = build_model(&cfg.actor, obs_dim, act_dim, Some(bounds), HeadKind::SquashedGaussian, seed)?;
        let c1 = build_model(&cfg.critic, obs_dim + act_dim, 1, None, HeadKind::Deterministic, seed + 1)?;
        let c2 = build_model(&cfg.critic, obs_dim + act_dim, 1, None, HeadKind::Deterministic, seed + 2)?;
        let log_alpha = Tensor::parameter(&[], vec![cfg.initial_entropy_coefficient.ln()])?;
        Ok(Self {
            cfg: cfg.clone(),
            alpha_opt: OptimState::new(std::slice::from_ref(&log_alpha), cfg.entropy_learning_rate),
            log_alpha,
            target_entropy: cfg.target_entropy.unwrap_or(-(act_dim as f64)),
            critic1_target: c1.frozen(),
            critic2_target: c2.frozen(),
            actor: Trained::new(actor, cfg.actor_learning_rate),
            critic1: Trained::new(c1, cfg.critic_learning_rate),
            critic2: Trained::new(c2, cfg.critic_learning_rate),
            memory: replay_memory(memory, cfg.memory_size, num_envs, obs_dim, act_dim, seed ^ 0x3e30)?,
            action_space: action_space.clone(),
            num_envs,
            spaces: (observation_space.clone(), action_space.clone()),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xac7),
            recorded: 0,
            updates: 0,
        })
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    pub fn entropy_coefficient(&self) -> f64 {
        self.log_alpha.item().exp()
    }

    fn learning_starts(&self) -> usize {
        self.cfg.learning_starts.unwrap_or(self.cfg.batch_size)
    }

    fn update(&mut self) -> Result<(f64, f64, f64), AgentError> {
        let b = sample_replay(&self.memory, self.cfg.batch_size)?;
        let alpha = self.entropy_coefficient();
        let (q1n, q2n, logp_next) = no_grad(|| -> Result<_, AgentError> {
            let next = squashed_gaussian_act(&self.actor.model, &b.next_states, false, &mut self.rng)?;
            let sa = state_action(&b.next_states.to_tensor(), &next.actions)?;
            Ok((
                self.critic1_target.forward(&sa)?,
                self.critic2_target.forward(&sa)?,
                next.log_probs,
            ))
        })?;
        let y = Tensor::from_vec(sac_targets(
            &b.rewards,
            &b.terminated,
            q1n.data(),
            q2n.data(),
            logp_next.data(),
            alpha,
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

        let (c1, c2) = (self.critic1.model.frozen(), self.critic2.model.frozen());
        let pi = squashed_gaussian_act(&self.actor.model, &b.states, false, &mut self.rng)?;
        let sa = state_action(&states, &pi.actions)?;
        let q = flat(&c1.forward(&sa)?.minimum(&c2.forward(&sa)?)?)?;
        let actor_loss = pi.log_probs.scale(alpha).sub(&q)?.mean()?;
        let grads = actor_loss.backward()?;
        self.actor.apply(&grads, None)?;

        let mut alpha_loss = 0.0;
        if self.cfg.learn_entropy {
            let loss = temperature_loss(&self.log_alpha, pi.log_probs.data(), self.target_entropy);
            alpha_loss = loss.item();
            let g = loss.backward()?.get_or_zeros(&self.log_alpha);
            let fresh = adam_step(
                std::slice::from_ref(&self.log_alpha),
                &[g],
                &mut self.alpha_opt,
                &AdamConfig::default(),
            )?;
            self.log_alpha = fresh.into_iter().next().expect("one parameter");
        }

        polyak_update(&mut self.critic1_target, &self.critic1.model, self.cfg.polyak)?;
        polyak_update(&mut self.critic2_target, &self.critic2.model, self.cfg.polyak)?;
        self.updates += 1;
        Ok((critic_loss.item(), actor_loss.item(), alpha_loss))
    }
}

impl Agent for SacAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Sac
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
        let out = no_grad(|| squashed_gaussian_act(&self.actor.model, states, false, &mut self.rng))?;
        Ok(out.action_batch())
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
        let mut losses = (0.0, 0.0, 0.0);
        for _ in 0..self.cfg.gradient_steps {
            losses = self.update()?;
        }
        Ok(vec![
            ("critic_loss", losses.0),
            ("policy_loss", losses.1),
            ("entropy_loss", losses.2),
            ("entropy_coefficient", self.entropy_coefficient()),
        ])
    }

    fn eval_act(&mut self, states: &Batch) -> Result<Batch, AgentError> {
        let out = no_grad(|| squashed_gaussian_act(&self.actor.model, states, true, &mut self.rng))?;
        Ok(out.action_batch())
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.actor.named_tensors("policy");
        out.extend(self.critic1.named_tensors("critic_1"));
        out.extend(self.critic2.named_tensors("critic_2"));
        out.extend(self.critic1_target.named_tensors("target_critic_1"));
        out.extend(self.critic2_target.named_tensors("target_critic_2"));
        out.push(("log_entropy_coefficient".into(), self.log_alpha.detach()));
        out.extend(optim_tensors("log_entropy_coefficient.adam", &self.alpha_opt));
        out.push(scalar("updates", self.updates as f64));
        out.push(scalar("recorded", self.recorded as f64));
        out
    }

    fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<(), AgentError> {
        self.actor.load_named(tensors, "policy")?;
        self.critic1.load_named(tensors, "critic_1")?;
        self.critic2.load_named(tensors, "critic_2")?;
        self.critic1_target.load_named(tensors, "target_critic_1")?;
        self.critic2_target.load_named(tensors, "target_critic_2")?;
        self.log_alpha = checkpoint::take(tensors, "log_entropy_coefficient", &[])?.to_parameter();
        load_optim(tensors, "log_entropy_coefficient.adam", &mut self.alpha_opt)?;
        self.updates = load_scalar(tensors, "updates")? as u64;
        self.recorded = load_scalar(tensors, "recorded")? as usize;
        Ok(())
    }

    fn parameters_finite(&self) -> bool {
        self.log_alpha.item().is_finite()
            && super::util::finite(&[
                &self.actor.model,
                &self.critic1.model,
                &self.critic2.model,
                &self.critic1_target,
                &self.critic2_target,
            ])
    }
}
