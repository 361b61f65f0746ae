use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::util::{build_model, column, load_scalar, scalar, Trained};
use super::{Agent, AgentError, AgentKind, Metrics, PpoConfig, StepInfo, Transition};
use crate::batch::Batch;
use crate::env::Space;
use crate::memory::{Dtype, Memory};
use crate::model::{categorical_act, gaussian_act, CategoricalMode, HeadKind, Model, ModelSpec, PolicyOutput};
use crate::scheduler::Scheduler;
use crate::tensor::{no_grad, Tensor};

/// Generalized advantage estimation over time-major arrays of
/// `T * num_envs` entries (`index = t * num_envs + env`).
///
/// `A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1}` with
/// `delta_t = r_t + gamma * (1 - done_t) * V_{t+1} - V_t`; returns are
/// `A + V`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[f64],
    last_values: &[f64],
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
    let n = last_values.len();
    let len = rewards.len();
    if n == 0 || values.len() != len || dones.len() != len || len % n != 0 {
        return Err(AgentError::Precondition(format!(
            "gae: {} rewards, {} values, {} dones, {} last values",
            len,
            values.len(),
            dones.len(),
            n
        )));
    }
    let mut adv = vec![0.0; len];
    let mut next_adv = vec![0.0; n];
    let mut next_value = last_values.to_vec();
    for t in (0..len / n).rev() {
        for e in 0..n {
            let i = t * n + e;
            let live = 1.0 - dones[i];
            let delta = rewards[i] + gamma * live * next_value[e] - values[i];
            adv[i] = delta + gamma * lam * live * next_adv[e];
            next_adv[e] = adv[i];
            next_value[e] = values[i];
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)` for one sample.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

pub(crate) fn normalize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for x in v {
        *x = (*x - mean) / std;
    }
}

/// Stochastic policy over either action space: categorical for discrete
/// actions, diagonal Gaussian for boxes.
pub(crate) fn policy_model(spec: &ModelSpec, obs: &Space, act: &Space, seed: u64) -> Result<Model, AgentError> {
    match act.n() {
        Some(n) => build_model(spec, obs.dim(), n, None, HeadKind::Categorical, seed),
        None => build_model(spec, obs.dim(), act.dim(), None, HeadKind::Gaussian, seed),
    }
}

pub(crate) fn policy_sample<R: Rng>(model: &Model, states: &Batch, rng: &mut R) -> Result<PolicyOutput, AgentError> {
    Ok(match model.head() {
        HeadKind::Categorical => categorical_act(model, states, CategoricalMode::Sample, rng)?,
        _ => gaussian_act(model, states, None, rng)?,
    })
}

pub(crate) fn policy_evaluate<R: Rng>(
    model: &Model,
    states: &Batch,
    actions: &Batch,
    rng: &mut R,
) -> Result<PolicyOutput, AgentError> {
    Ok(match model.head() {
        HeadKind::Categorical => {
            let idx = actions.indices();
            categorical_act(model, states, CategoricalMode::Given(&idx), rng)?
        }
        _ => gaussian_act(model, states, Some(actions), rng)?,
    })
}

/// Argmax or mean actions.
pub(crate) fn policy_mode(model: &Model, states: &Batch) -> Result<Batch, AgentError> {
    no_grad(|| -> Result<Batch, AgentError> {
        Ok(match model.head() {
            HeadKind::Categorical => {
                categorical_act(model, states, CategoricalMode::Argmax, &mut ChaCha8Rng::seed_from_u64(0))?
                    .action_batch()
            }
            _ => Batch::from_tensor(&model.forward(&states.to_tensor())?)?,
        })
    })
}

pub(crate) fn values_of(value: &Model, states: &Batch) -> Result<Vec<f64>, AgentError> {
    Ok(no_grad(|| value.forward(&states.to_tensor()))?.data().to_vec())
}

/// Rollout storage for the on-policy agents.
///
/// Rewards of time-limit truncated rows are augmented with
/// `gamma * V(final observation)` so the cut episode still bootstraps.
pub(crate) struct Rollout {
    pub memory: Memory,
    pub last_next_states: Option<Batch>,
    pending_log_probs: Vec<f64>,
    pending_values: Vec<f64>,
}

pub(crate) struct RolloutData {
    pub states: Batch,
    pub actions: Batch,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Rollout {
    pub fn new(rollouts: usize, num_envs: usize, obs_dim: usize, act_dim: usize, seed: u64) -> Result<Self, AgentError> {
        let mut memory = Memory::new(rollouts, num_envs, seed)?;
        memory.create_tensor("states", obs_dim, Dtype::F64)?;
        memory.create_tensor("actions", act_dim, Dtype::F64)?;
        memory.create_tensor("log_prob", 1, Dtype::F64)?;
        memory.create_tensor("values", 1, Dtype::F64)?;
        memory.create_tensor("rewards", 1, Dtype::F64)?;
        memory.create_tensor("dones", 1, Dtype::Bool)?;
        Ok(Self {
            memory,
            last_next_states: None,
            pending_log_probs: Vec::new(),
            pending_values: Vec::new(),
        })
    }

    /// Remembers what the policy and value function said about the states
    /// just acted on.
    pub fn stage(&mut self, log_probs: Vec<f64>, values: Vec<f64>) {
        self.pending_log_probs = log_probs;
        self.pending_values = values;
    }

    pub fn record(&mut self, t: &Transition<'_>, value: &Model, gamma: f64) -> Result<(), AgentError> {
        let mut rewards = t.rewards.to_vec();
        let cut: Vec<usize> = (0..rewards.len()).filter(|&i| t.truncated[i]).collect();
        if !cut.is_empty() {
            let v = values_of(value, &t.next_states.select_rows(&cut))?;
            for (&i, v) in cut.iter().zip(v) {
                rewards[i] += gamma * v;
            }
        }
        let dones: Vec<bool> = t.terminated.iter().zip(t.truncated).map(|(a, b)| *a || *b).collect();
        self.memory.add_samples(&[
            ("states", t.states),
            ("actions", t.actions),
            ("log_prob", &Batch::column(std::mem::take(&mut self.pending_log_probs))),
            ("values", &Batch::column(std::mem::take(&mut self.pending_values))),
            ("rewards", &Batch::column(rewards)),
            ("dones", &column(&dones)),
        ])?;
        self.last_next_states = Some(t.next_states.clone());
        Ok(())
    }

    pub fn clear(&mut self) {
        self.memory.clear();
        self.last_next_states = None;
    }

    pub fn is_complete(&self) -> bool {
        self.memory.is_filled()
    }

    /// Everything collected, with advantages and returns. The storage stays
    /// readable until [`Rollout::clear`].
    pub fn finish(&mut self, value: &Model, gamma: f64, lam: f64, normalize_adv: bool) -> Result<RolloutData, AgentError> {
        let take = |name: &str| self.memory.transitions(name);
        let (states, actions) = (take("states")?, take("actions")?);
        let log_probs = take("log_prob")?.into_data();
        let values = take("values")?.into_data();
        let rewards = take("rewards")?.into_data();
        let dones = take("dones")?.into_data();
        let last = self
            .last_next_states
            .as_ref()
            .ok_or_else(|| AgentError::Precondition("empty rollout".into()))?;
        let last_values = values_of(value, last)?;
        let (mut advantages, returns) = gae(&rewards, &values, &dones, &last_values, gamma, lam)?;
        if normalize_adv && advantages.len() > 1 {
            normalize(&mut advantages);
        }
        Ok(RolloutData {
            states,
            actions,
            log_probs,
            values,
            advantages,
            returns,
        })
    }
}

pub struct PpoAgent {
    cfg: PpoConfig,
    policy: Trained,
    value: Trained,
    scheduler: Scheduler,
    rollout: Rollout,
    num_envs: usize,
    spaces: (Space, Space),
    rng: ChaCha8Rng,
    updates: u64,
}

impl PpoAgent {
    pub fn new(
        cfg: &PpoConfig,
        observation_space: &Space,
        action_space: &Space,
        num_envs: usize,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let policy = policy_model(&cfg.policy, observation_space, action_space, seed)?;
        let value = build_model(&cfg.value, observation_space.dim(), 1, None, HeadKind::Deterministic, seed + 1)?;
        Ok(Self {
            cfg: cfg.clone(),
            policy: Trained::new(policy, cfg.learning_rate),
            value: Trained::new(value, cfg.learning_rate),
            scheduler: Scheduler::new(&cfg.scheduler, cfg.learning_rate)?,
            rollout: Rollout::new(
                cfg.rollouts,
                num_envs,
                observation_space.dim(),
                action_space.dim(),
                seed ^ 0x3e30,
            )?,
            num_envs,
            spaces: (observation_space.clone(), action_space.clone()),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xac7),
            updates: 0,
        })
    }

    pub fn policy(&self) -> &Model {
        &self.policy.model
    }

    pub fn learning_rate(&self) -> f64 {
        self.scheduler.current_lr()
    }

    fn set_lr(&mut self, lr: f64) {
        self.policy.opt.learning_rate = lr;
        self.value.opt.learning_rate = lr;
    }

    /// Runs the epochs over one rollout and returns the losses and the mean
    /// KL estimate of the last epoch.
    fn update(&mut self, data: &RolloutData) -> Result<Metrics, AgentError> {
        let eps = self.cfg.ratio_clip;
        let (mut pl, mut vl, mut ent, mut kl_epoch) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..self.cfg.epochs {
            let parts = self.rollout.memory.sample_all_indices(self.cfg.minibatches)?;
            let mut kls = Vec::with_capacity(parts.len());
            for idx in &parts {
                let states = data.states.select_rows(idx);
                let actions = data.actions.select_rows(idx);
                let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
                let (old_lp, adv, ret, old_v) = (
                    pick(&data.log_probs),
                    pick(&data.advantages),
                    pick(&data.returns),
                    pick(&data.values),
                );
                let out = policy_evaluate(&self.policy.model, &states, &actions, &mut self.rng)?;
                let kl = old_lp.iter().zip(out.log_probs.data()).map(|(o, n)| o - n).sum::<f64>() / idx.len() as f64;
                kls.push(kl);

                let ratio = out.log_probs.sub(&Tensor::from_vec(old_lp))?.exp();
                let adv = Tensor::from_vec(adv);
                let surr = ratio.mul(&adv)?;
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps)?.mul(&adv)?;
                let policy_loss = surr.minimum(&clipped)?.mean()?.neg();

                let v = self.value.model.forward(&states.to_tensor())?.reshape(&[idx.len()])?;
                let ret = Tensor::from_vec(ret);
                let value_err = match self.cfg.value_clip {
                    Some(c) => {
                        let old_v = Tensor::from_vec(old_v);
                        let vc = v.sub(&old_v)?.clamp(-c, c)?.add(&old_v)?;
                        let a = v.sub(&ret)?.square();
                        let b = vc.sub(&ret)?.square();
                        a.neg().minimum(&b.neg())?.neg().mean()?
                    }
                    None => v.sub(&ret)?.square().mean()?,
                };
                let value_loss = value_err.scale(self.cfg.value_loss_scale);
                let entropy = out.entropy.mean()?;
                let entropy_loss = entropy.scale(-self.cfg.entropy_loss_scale);
                let total = policy_loss.add(&value_loss)?.add(&entropy_loss)?;
                let grads = total.backward()?;
                self.policy.apply(&grads, self.cfg.max_grad_norm)?;
                self.value.apply(&grads, self.cfg.max_grad_norm)?;
                pl = policy_loss.item();
                vl = value_loss.item();
                ent = entropy.item();
            }
            kl_epoch = kls.iter().sum::<f64>() / kls.len() as f64;
            if self.scheduler.is_kl_adaptive() {
                let lr = self.scheduler.observe_kl(kl_epoch);
                self.set_lr(lr);
            }
        }
        Ok(vec![
            ("policy_loss", pl),
            ("value_loss", vl),
            ("entropy", ent),
            ("kl", kl_epoch),
            ("learning_rate", self.scheduler.current_lr()),
        ])
    }
}

impl Agent for PpoAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Ppo
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

    fn act(&mut self, states: &Batch, _step: StepInfo) -> Result<Batch, AgentError> {
        let out = no_grad(|| policy_sample(&self.policy.model, states, &mut self.rng))?;
        let values = values_of(&self.value.model, states)?;
        self.rollout.stage(out.log_probs.data().to_vec(), values);
        Ok(out.action_batch())
    }

    fn record_transition(&mut self, t: &Transition<'_>, _step: StepInfo) -> Result<(), AgentError> {
        self.rollout.record(t, &self.value.model, self.cfg.discount)
    }

    fn post_interaction(&mut self, step: StepInfo) -> Result<Metrics, AgentError> {
        if !self.rollout.is_complete() {
            return Ok(Vec::new());
        }
        let lr = self.scheduler.observe_progress(step.timestep, step.total_timesteps);
        self.set_lr(lr);
        let data = self.rollout.finish(
            &self.value.model,
            self.cfg.discount,
            self.cfg.lambda,
            self.cfg.normalize_advantages,
        )?;
        let metrics = self.update(&data)?;
        self.rollout.clear();
        self.updates += 1;
        Ok(metrics)
    }

    fn eval_act(&mut self, states: &Batch) -> Result<Batch, AgentError> {
        policy_mode(&self.policy.model, states)
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.policy.named_tensors("policy");
        out.extend(self.value.named_tensors("value"));
        out.push(scalar("learning_rate", self.scheduler.current_lr()));
        out.push(scalar("updates", self.updates as f64));
        out
    }

    fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<(), AgentError> {
        self.policy.load_named(tensors, "policy")?;
        self.value.load_named(tensors, "value")?;
        self.updates = load_scalar(tensors, "updates")? as u64;
        Ok(())
    }

    fn parameters_finite(&self) -> bool {
        super::util::finite(&[&self.policy.model, &self.value.model])
    }
}
