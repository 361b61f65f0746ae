use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::util::{build_model, load_scalar, require_discrete, scalar, Trained};
use super::{Agent, AgentError, AgentKind, CemConfig, Metrics, StepInfo, Transition};
use crate::batch::Batch;
use crate::env::Space;
use crate::model::{categorical_act, CategoricalMode, HeadKind};
use crate::tensor::{no_grad, Tensor};

/// Quantile with linear interpolation between order statistics (position
/// `q * (n - 1)` in the sorted sample).
pub fn numpy_quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Episodes whose return reaches the `1 - elite_fraction` quantile.
pub fn cem_elite_mask(returns: &[f64], elite_fraction: f64) -> Vec<bool> {
    let threshold = numpy_quantile(returns, 1.0 - elite_fraction);
    returns.iter().map(|&r| r >= threshold).collect()
}

/// A finished episode: its return and the visited `(state, action)` pairs.
#[derive(Debug, Clone, Default)]
pub struct Episode {
    pub ret: f64,
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
}

/// Fits the categorical policy to the elite episodes' actions by minimizing
/// their mean negative log-likelihood. Returns the loss before the last step.
pub(crate) fn cem_update(
    policy: &mut Trained,
    episodes: &[Episode],
    elite_fraction: f64,
    gradient_steps: usize,
    obs_dim: usize,
) -> Result<f64, AgentError> {
    if episodes.is_empty() {
        return Err(AgentError::Precondition("CEM update needs at least one complete episode".into()));
    }
    let returns: Vec<f64> = episodes.iter().map(|e| e.ret).collect();
    let mask = cem_elite_mask(&returns, elite_fraction);
    let (mut states, mut actions) = (Vec::new(), Vec::new());
    for (e, elite) in episodes.iter().zip(mask) {
        if elite {
            states.extend_from_slice(&e.states);
            actions.extend_from_slice(&e.actions);
        }
    }
    let obs = Batch::new(actions.len(), obs_dim, states);
    let mut loss = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..gradient_steps {
        let out = categorical_act(&policy.model, &obs, CategoricalMode::Given(&actions), &mut rng)?;
        let nll = out.log_probs.mean()?.neg();
        loss = nll.item();
        let grads = nll.backward()?;
        policy.apply(&grads, None)?;
    }
    Ok(loss)
}

pub struct CemAgent {
    cfg: CemConfig,
    policy: Trained,
    num_envs: usize,
    spaces: (Space, Space),
    obs_dim: usize,
    rng: ChaCha8Rng,
    running: Vec<Episode>,
    completed: Vec<Episode>,
    updates: u64,
}

impl CemAgent {
    pub fn new(
        cfg: &CemConfig,
        observation_space: &Space,
        action_space: &Space,
        num_envs: usize,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let n = require_discrete(AgentKind::Cem, action_space)?;
        let obs_dim = observation_space.dim();
        let model = build_model(&cfg.policy, obs_dim, n, None, HeadKind::Categorical, seed)?;
        Ok(Self {
            cfg: cfg.clone(),
            policy: Trained::new(model, cfg.learning_rate),
            num_envs,
            spaces: (observation_space.clone(), action_space.clone()),
            obs_dim,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
            running: vec![Episode::default(); num_envs],
            completed: Vec::new(),
            updates: 0,
        })
    }
}

impl Agent for CemAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Cem
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
        let out = no_grad(|| categorical_act(&self.policy.model, states, CategoricalMode::Sample, &mut self.rng))?;
        Ok(out.action_batch())
    }

    fn record_transition(&mut self, t: &Transition<'_>, _step: StepInfo) -> Result<(), AgentError> {
        for row in 0..t.rewards.len() {
            let e = &mut self.running[row];
            e.ret += t.rewards[row];
            e.states.extend_from_slice(t.states.row(row));
            e.actions.push(t.actions.row(row)[0] as usize);
            if t.terminated[row] || t.truncated[row] {
                self.completed.push(std::mem::take(e));
            }
        }
        Ok(())
    }

    fn post_interaction(&mut self, _step: StepInfo) -> Result<Metrics, AgentError> {
        if self.completed.len() < self.cfg.episodes_per_update {
            return Ok(Vec::new());
        }
        let episodes = std::mem::take(&mut self.completed);
        let loss = cem_update(
            &mut self.policy,
            &episodes,
            self.cfg.elite_fraction,
            self.cfg.gradient_steps,
            self.obs_dim,
        )?;
        self.updates += 1;
        let mean = episodes.iter().map(|e| e.ret).sum::<f64>() / episodes.len() as f64;
        Ok(vec![("policy_loss", loss), ("batch_mean_return", mean)])
    }

    fn eval_act(&mut self, states: &Batch) -> Result<Batch, AgentError> {
        let out = no_grad(|| categorical_act(&self.policy.model, states, CategoricalMode::Argmax, &mut self.rng))?;
        Ok(out.action_batch())
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.policy.named_tensors("policy");
        out.push(scalar("updates", self.updates as f64));
        out
    }

    fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<(), AgentError> {
        self.policy.load_named(tensors, "policy")?;
        self.updates = load_scalar(tensors, "updates")? as u64;
        Ok(())
    }

    fn parameters_finite(&self) -> bool {
        super::util::finite(&[&self.policy.model])
    }
}
