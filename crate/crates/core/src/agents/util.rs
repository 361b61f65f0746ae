use rand::Rng;

use super::names::*;
use super::{AgentError, AgentKind, Transition};
use crate::batch::Batch;
use crate::env::Space;
use crate::memory::{Dtype, Memory, SharedMemory};
use crate::model::{instantiate_model, HeadKind, Model, ModelSpec};
use crate::tensor::checkpoint;
use crate::tensor::optim::{adam_step, clip_grad_norm, AdamConfig, OptimState};
use crate::tensor::{Gradients, Tensor};

/// A model with its Adam state.
#[derive(Debug, Clone)]
pub(crate) struct Trained {
    pub model: Model,
    pub opt: OptimState,
}

impl Trained {
    pub fn new(model: Model, learning_rate: f64) -> Self {
        let opt = OptimState::new(model.params(), learning_rate);
        Self { model, opt }
    }

    /// One Adam step from the gradients recorded in `grads`. Returns the
    /// pre-clip gradient norm.
    pub fn apply(&mut self, grads: &Gradients, max_norm: Option<f64>) -> Result<f64, AgentError> {
        let mut g: Vec<Vec<f64>> = self.model.params().iter().map(|p| grads.get_or_zeros(p)).collect();
        let norm = match max_norm {
            Some(m) => clip_grad_norm(&mut g, m),
            None => g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt(),
        };
        let fresh = adam_step(self.model.params(), &g, &mut self.opt, &AdamConfig::default())?;
        self.model.params_mut().clone_from_slice(&fresh);
        Ok(norm)
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = self.model.named_tensors(prefix);
        out.extend(optim_tensors(&format!("{prefix}.adam"), &self.opt));
        out
    }

    pub fn load_named(&mut self, tensors: &[(String, Tensor)], prefix: &str) -> Result<(), AgentError> {
        self.model.load_named(tensors, prefix)?;
        load_optim(tensors, &format!("{prefix}.adam"), &mut self.opt)
    }
}

pub(crate) fn optim_tensors(prefix: &str, opt: &OptimState) -> Vec<(String, Tensor)> {
    let mut out = vec![
        (format!("{prefix}.step"), Tensor::scalar(opt.step_count as f64)),
        (format!("{prefix}.lr"), Tensor::scalar(opt.learning_rate)),
    ];
    for (i, (m, v)) in opt.first_moment.iter().zip(&opt.second_moment).enumerate() {
        out.push((format!("{prefix}.m{i}"), Tensor::from_vec(m.clone())));
        out.push((format!("{prefix}.v{i}"), Tensor::from_vec(v.clone())));
    }
    out
}

pub(crate) fn load_optim(tensors: &[(String, Tensor)], prefix: &str, opt: &mut OptimState) -> Result<(), AgentError> {
    opt.step_count = checkpoint::take(tensors, &format!("{prefix}.step"), &[])?.item() as u64;
    opt.learning_rate = checkpoint::take(tensors, &format!("{prefix}.lr"), &[])?.item();
    for i in 0..opt.first_moment.len() {
        let n = opt.first_moment[i].len();
        opt.first_moment[i].copy_from_slice(checkpoint::take(tensors, &format!("{prefix}.m{i}"), &[n])?.data());
        opt.second_moment[i].copy_from_slice(checkpoint::take(tensors, &format!("{prefix}.v{i}"), &[n])?.data());
    }
    Ok(())
}

pub(crate) fn scalar(name: &str, v: f64) -> (String, Tensor) {
    (name.to_string(), Tensor::scalar(v))
}

pub(crate) fn load_scalar(tensors: &[(String, Tensor)], name: &str) -> Result<f64, AgentError> {
    Ok(checkpoint::take(tensors, name, &[])?.item())
}

pub(crate) fn finite(models: &[&Model]) -> bool {
    models
        .iter()
        .all(|m| m.params().iter().all(|p| p.data().iter().all(|v| v.is_finite())))
}

/// Instantiates `spec` with the given dims filled in.
pub(crate) fn build_model(
    spec: &ModelSpec,
    input_dim: usize,
    output_dim: usize,
    bounds: Option<(&[f64], &[f64])>,
    head: HeadKind,
    seed: u64,
) -> Result<Model, AgentError> {
    let mut s = spec.clone();
    s.input_dim = input_dim;
    s.output_dim = output_dim;
    s.output_scale = bounds.map(|(lo, hi)| lo.iter().zip(hi).map(|(l, h)| [*l, *h]).collect());
    Ok(instantiate_model(&s, head, seed)?)
}

pub(crate) fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor, AgentError> {
    Ok(pred.sub(target)?.square().mean()?)
}

/// Huber loss with threshold 1.
pub(crate) fn huber(pred: &Tensor, target: &Tensor) -> Result<Tensor, AgentError> {
    let d = pred.sub(target)?;
    let loss = d.map_elementwise(
        |x| if x.abs() <= 1.0 { 0.5 * x * x } else { x.abs() - 0.5 },
        |x, _| x.clamp(-1.0, 1.0),
    );
    Ok(loss.mean()?)
}

/// `start` at `t = 0` moving linearly to `end` at `t = horizon`, then flat.
pub(crate) fn linear_schedule(start: f64, end: f64, t: usize, horizon: usize) -> f64 {
    if horizon == 0 || t >= horizon {
        return end;
    }
    start + (end - start) * t as f64 / horizon as f64
}

pub(crate) fn column(values: &[bool]) -> Batch {
    Batch::column(values.iter().map(|&b| f64::from(u8::from(b))).collect())
}

pub(crate) fn random_actions<R: Rng + ?Sized>(space: &Space, rows: usize, rng: &mut R) -> Batch {
    let data: Vec<f64> = (0..rows).flat_map(|_| space.sample(rng)).collect();
    Batch::new(rows, space.dim(), data)
}

/// Clips each column into the space bounds.
pub(crate) fn clip_to(space: &Space, actions: &mut Batch) {
    if let Some((lo, hi)) = space.bounds() {
        let d = lo.len();
        for (i, a) in actions.data_mut().iter_mut().enumerate() {
            *a = a.clamp(lo[i % d], hi[i % d]);
        }
    }
}

pub(crate) fn require_box<'a>(kind: AgentKind, space: &'a Space) -> Result<(&'a [f64], &'a [f64]), AgentError> {
    space.bounds().ok_or_else(|| AgentError::Space {
        kind,
        what: "a discrete action".into(),
    })
}

pub(crate) fn require_discrete(kind: AgentKind, space: &Space) -> Result<usize, AgentError> {
    space.n().ok_or_else(|| AgentError::Space {
        kind,
        what: "a continuous action".into(),
    })
}

/// Replay memory for off-policy agents: the shared one when given, else a
/// private memory of `memory_size` transitions over `num_envs` rows.
pub(crate) fn replay_memory(
    shared: Option<SharedMemory>,
    memory_size: usize,
    num_envs: usize,
    obs_dim: usize,
    act_dim: usize,
    seed: u64,
) -> Result<SharedMemory, AgentError> {
    let mem = match shared {
        Some(m) => m,
        None => Memory::new(memory_size.div_ceil(num_envs), num_envs, seed)?.shared(),
    };
    {
        let mut m = mem.lock().expect("memory lock");
        m.ensure_tensor(STATES, obs_dim, Dtype::F64)?;
        m.ensure_tensor(ACTIONS, act_dim, Dtype::F64)?;
        m.ensure_tensor(REWARDS, 1, Dtype::F64)?;
        m.ensure_tensor(NEXT_STATES, obs_dim, Dtype::F64)?;
        m.ensure_tensor(TERMINATED, 1, Dtype::Bool)?;
        m.ensure_tensor(TRUNCATED, 1, Dtype::Bool)?;
    }
    Ok(mem)
}

pub(crate) fn record_replay(mem: &SharedMemory, t: &Transition<'_>) -> Result<(), AgentError> {
    let rewards = Batch::column(t.rewards.to_vec());
    let (term, trunc) = (column(t.terminated), column(t.truncated));
    mem.lock().expect("memory lock").add_samples(&[
        (STATES, t.states),
        (ACTIONS, t.actions),
        (REWARDS, &rewards),
        (NEXT_STATES, t.next_states),
        (TERMINATED, &term),
        (TRUNCATED, &trunc),
    ])?;
    Ok(())
}

/// A uniformly drawn minibatch of replay transitions.
pub(crate) struct ReplayBatch {
    pub states: Batch,
    pub actions: Batch,
    pub rewards: Vec<f64>,
    pub next_states: Batch,
    pub terminated: Vec<f64>,
}

pub(crate) fn sample_replay(mem: &SharedMemory, batch_size: usize) -> Result<ReplayBatch, AgentError> {
    let mut m = mem.lock().expect("memory lock");
    let mut b = m.sample(&[STATES, ACTIONS, REWARDS, NEXT_STATES, TERMINATED], batch_size)?;
    let terminated = b.pop().expect("5 tensors").into_data();
    let next_states = b.pop().expect("5 tensors");
    let rewards = b.pop().expect("5 tensors").into_data();
    let actions = b.pop().expect("5 tensors");
    let states = b.pop().expect("5 tensors");
    Ok(ReplayBatch {
        states,
        actions,
        rewards,
        next_states,
        terminated,
    })
}

pub(crate) fn stored(mem: &SharedMemory) -> usize {
    mem.lock().expect("memory lock").stored_count()
}

/// Critic input `[states | actions]`.
pub(crate) fn state_action(states: &Tensor, actions: &Tensor) -> Result<Tensor, AgentError> {
    Ok(Tensor::concat(&[states, actions])?)
}

/// Column vector `[B × 1]` to `[B]`.
pub(crate) fn flat(t: &Tensor) -> Result<Tensor, AgentError> {
    Ok(t.reshape(&[t.numel()])?)
}
