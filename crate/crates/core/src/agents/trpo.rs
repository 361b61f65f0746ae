use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ppo::{policy_evaluate, policy_mode, policy_model, policy_sample, values_of, Rollout, RolloutData};
use super::util::{build_model, load_scalar, scalar, Trained};
use super::{Agent, AgentError, AgentKind, Metrics, StepInfo, Transition, TrpoConfig};
use crate::batch::Batch;
use crate::env::Space;
use crate::model::{HeadKind, Model, LOG_STD_MAX, LOG_STD_MIN};
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CgError {
    #[error("conjugate gradient produced a non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for a symmetric positive-definite operator, stopping
/// once the squared residual norm falls to `residual_tol` or after
/// `max_iters` iterations.
pub fn conjugate_gradient<F>(mut apply_a: F, b: &[f64], max_iters: usize, residual_tol: f64) -> Result<Vec<f64>, CgError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    for iteration in 0..max_iters {
        if rr <= residual_tol {
            break;
        }
        let ap = apply_a(&p);
        let pap = dot(&p, &ap);
        let alpha = rr / pap;
        if !alpha.is_finite() {
            return Err(CgError::NonFinite {
                what: "step size",
                iteration,
            });
        }
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() {
            return Err(CgError::NonFinite {
                what: "residual",
                iteration,
            });
        }
        let beta = rr_next / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
    }
    Ok(x)
}

/// `(grad_kl(theta + eps * v) - grad_kl(theta)) / eps + damping * v`.
pub fn fisher_vector_product<F>(
    mut kl_grad: F,
    theta: &[f64],
    v: &[f64],
    eps: f64,
    damping: f64,
) -> Result<Vec<f64>, AgentError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, AgentError>,
{
    let shifted: Vec<f64> = theta.iter().zip(v).map(|(t, x)| t + eps * x).collect();
    let g1 = kl_grad(&shifted)?;
    let g0 = kl_grad(theta)?;
    Ok(g1
        .iter()
        .zip(&g0)
        .zip(v)
        .map(|((a, b), x)| (a - b) / eps + damping * x)
        .collect())
}

/// Trust-region settings for [`trust_region_step`].
#[derive(Debug, Clone, Copy)]
pub struct TrustRegion {
    pub max_kl: f64,
    pub damping: f64,
    pub fvp_epsilon: f64,
    pub cg_iterations: usize,
    pub cg_residual_tol: f64,
    pub line_search_steps: usize,
    pub backtrack_ratio: f64,
}

impl From<&TrpoConfig> for TrustRegion {
    fn from(c: &TrpoConfig) -> Self {
        Self {
            max_kl: c.max_kl,
            damping: c.damping,
            fvp_epsilon: c.fvp_epsilon,
            cg_iterations: c.cg_iterations,
            cg_residual_tol: c.cg_residual_tol,
            line_search_steps: c.line_search_steps,
            backtrack_ratio: c.backtrack_ratio,
        }
    }
}

/// Outcome of one trust-region step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// New parameters and their measured KL from the old policy, which is at
    /// most `max_kl`.
    Accepted { theta: Vec<f64>, kl: f64 },
    /// No candidate passed the line search or the gradient vanished; the
    /// parameters stay unchanged.
    Rejected,
}

/// Natural-gradient direction `F^-1 g` solved by conjugate gradient with
/// finite-difference Fisher-vector products.
pub fn natural_gradient<F>(kl_grad: F, theta: &[f64], g: &[f64], tr: &TrustRegion) -> Result<Vec<f64>, AgentError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, AgentError>,
{
    let kl_grad = std::cell::RefCell::new(kl_grad);
    let failure = std::cell::RefCell::new(None);
    let x = conjugate_gradient(
        |v| match fisher_vector_product(&mut *kl_grad.borrow_mut(), theta, v, tr.fvp_epsilon, tr.damping) {
            Ok(fv) => fv,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                vec![f64::NAN; v.len()]
            }
        },
        g,
        tr.cg_iterations,
        tr.cg_residual_tol,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    x.map_err(|e| AgentError::NonFinite(e.to_string()))
}

/// Maximizes `surrogate` within the KL trust region around `theta`.
///
/// `g` is the surrogate gradient at `theta`. A candidate is committed only
/// when the surrogate strictly improves and `kl(candidate) <= max_kl`.
pub fn trust_region_step<G, S, K>(
    theta: &[f64],
    g: &[f64],
    kl_grad: G,
    mut surrogate: S,
    mut kl: K,
    tr: &TrustRegion,
) -> Result<StepOutcome, AgentError>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>, AgentError>,
    S: FnMut(&[f64]) -> Result<f64, AgentError>,
    K: FnMut(&[f64]) -> Result<f64, AgentError>,
{
    if g.iter().all(|v| *v == 0.0) {
        return Ok(StepOutcome::Rejected);
    }
    let mut kl_grad = kl_grad;
    let x = natural_gradient(&mut kl_grad, theta, g, tr)?;
    let fx = fisher_vector_product(&mut kl_grad, theta, &x, tr.fvp_epsilon, tr.damping)?;
    let xfx = dot(&x, &fx);
    if !xfx.is_finite() || xfx <= 0.0 {
        log::warn!("trust region step skipped: x'Fx = {xfx}");
        return Ok(StepOutcome::Rejected);
    }
    let scale = (2.0 * tr.max_kl / xfx).sqrt();
    let base = surrogate(theta)?;
    let mut fraction = 1.0;
    for _ in 0..tr.line_search_steps {
        let candidate: Vec<f64> = theta.iter().zip(&x).map(|(t, d)| t + fraction * scale * d).collect();
        let gain = surrogate(&candidate)? - base;
        let measured = kl(&candidate)?;
        if gain > 0.0 && measured.is_finite() && measured <= tr.max_kl {
            return Ok(StepOutcome::Accepted {
                theta: candidate,
                kl: measured,
            });
        }
        fraction *= tr.backtrack_ratio;
    }
    Ok(StepOutcome::Rejected)
}

pub(crate) fn flatten(model: &Model) -> Vec<f64> {
    model.params().iter().flat_map(|p| p.data().iter().copied()).collect()
}

/// A copy of `model` whose parameters are read from `theta`.
pub(crate) fn with_flat(model: &Model, theta: &[f64]) -> Result<Model, AgentError> {
    let mut out = model.clone();
    let mut at = 0;
    for p in out.params_mut() {
        let n = p.numel();
        *p = Tensor::parameter(p.shape(), theta[at..at + n].to_vec())?;
        at += n;
    }
    Ok(out)
}

/// Frozen action distribution of the pre-update policy.
enum OldPolicy {
    Categorical { probs: Tensor, log_probs: Tensor },
    Gaussian { mean: Tensor, log_std: Tensor, var: Tensor },
}

impl OldPolicy {
    fn new(model: &Model, states: &Tensor) -> Result<Self, AgentError> {
        no_grad(|| -> Result<Self, AgentError> {
            let out = model.forward(states)?;
            Ok(match model.head() {
                HeadKind::Categorical => {
                    let log_probs = out.log_softmax()?;
                    OldPolicy::Categorical {
                        probs: log_probs.exp(),
                        log_probs,
                    }
                }
                _ => {
                    let log_std = model.log_std().expect("gaussian head").clamp(LOG_STD_MIN, LOG_STD_MAX)?;
                    let var = log_std.scale(2.0).exp();
                    OldPolicy::Gaussian {
                        mean: out,
                        log_std,
                        var,
                    }
                }
            })
        })
    }

    /// Mean `KL(old || model)` over `states`, differentiable in `model`.
    fn kl(&self, model: &Model, states: &Tensor) -> Result<Tensor, AgentError> {
        let out = model.forward(states)?;
        let rows = states.shape()[0] as f64;
        Ok(match self {
            OldPolicy::Categorical { probs, log_probs } => {
                let diff = log_probs.sub(&out.log_softmax()?)?;
                probs.mul(&diff)?.sum().scale(1.0 / rows)
            }
            OldPolicy::Gaussian { mean, log_std, var } => {
                let ls = model.log_std().expect("gaussian head").clamp(LOG_STD_MIN, LOG_STD_MAX)?;
                let num = mean.sub(&out)?.square().add(var)?;
                let per = num
                    .div(&ls.scale(2.0).exp().scale(2.0))?
                    .add(&ls.sub(log_std)?)?
                    .add_scalar(-0.5);
                per.sum().scale(1.0 / rows)
            }
        })
    }
}

pub struct TrpoAgent {
    cfg: TrpoConfig,
    policy: Model,
    pub(crate) value: Trained,
    pub(crate) rollout: Rollout,
    num_envs: usize,
    spaces: (Space, Space),
    rng: ChaCha8Rng,
    updates: u64,
    committed_kls: Vec<f64>,
}

impl TrpoAgent {
    pub fn new(
        cfg: &TrpoConfig,
        observation_space: &Space,
        action_space: &Space,
        num_envs: usize,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let policy = policy_model(&cfg.policy, observation_space, action_space, seed)?;
        let value = build_model(&cfg.value, observation_space.dim(), 1, None, HeadKind::Deterministic, seed + 1)?;
        Ok(Self {
            cfg: cfg.clone(),
            policy,
            value: Trained::new(value, cfg.value_learning_rate),
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
            committed_kls: Vec::new(),
        })
    }

    pub fn policy(&self) -> &Model {
        &self.policy
    }

    /// Measured KL of every committed policy step, in order.
    pub fn committed_kls(&self) -> &[f64] {
        &self.committed_kls
    }

    fn surrogate(&mut self, model: &Model, data: &RolloutData, advantages: &Tensor) -> Result<Tensor, AgentError> {
        let out = policy_evaluate(model, &data.states, &data.actions, &mut self.rng)?;
        let ratio = out.log_probs.sub(&Tensor::from_vec(data.log_probs.clone()))?.exp();
        Ok(ratio.mul(advantages)?.mean()?)
    }

    /// One trust-region policy step followed by value regression. Returns
    /// whether the policy changed and the last value loss.
    pub(crate) fn update(&mut self, data: &RolloutData) -> Result<(bool, f64), AgentError> {
        let states = data.states.to_tensor();
        let advantages = Tensor::from_vec(data.advantages.clone());
        let old = OldPolicy::new(&self.policy, &states)?;
        let theta = flatten(&self.policy);

        let trainable = self.policy.trainable();
        let surr = self.surrogate(&trainable, data, &advantages)?;
        let grads = surr.backward()?;
        let g: Vec<f64> = trainable.params().iter().flat_map(|p| grads.get_or_zeros(p)).collect();

        let policy = self.policy.clone();
        let kl_grad = |t: &[f64]| -> Result<Vec<f64>, AgentError> {
            let m = with_flat(&policy, t)?;
            let grads = old.kl(&m, &states)?.backward()?;
            Ok(m.params().iter().flat_map(|p| grads.get_or_zeros(p)).collect())
        };
        let mut rng = self.rng.clone();
        let surrogate = |t: &[f64]| -> Result<f64, AgentError> {
            let m = with_flat(&policy, t)?;
            no_grad(|| -> Result<f64, AgentError> {
                let out = policy_evaluate(&m, &data.states, &data.actions, &mut rng)?;
                let ratio = out.log_probs.sub(&Tensor::from_vec(data.log_probs.clone()))?.exp();
                Ok(ratio.mul(&advantages)?.mean()?.item())
            })
        };
        let kl = |t: &[f64]| -> Result<f64, AgentError> {
            let m = with_flat(&policy, t)?;
            no_grad(|| Ok(old.kl(&m, &states)?.item()))
        };
        let tr = TrustRegion::from(&self.cfg);
        let outcome = match trust_region_step(&theta, &g, kl_grad, surrogate, kl, &tr) {
            Ok(o) => o,
            Err(AgentError::NonFinite(msg)) => {
                log::warn!("trpo update skipped: {msg}");
                StepOutcome::Rejected
            }
            Err(e) => return Err(e),
        };
        let improved = match outcome {
            StepOutcome::Accepted { theta, kl } => {
                assert!(kl <= self.cfg.max_kl, "committed KL {kl} exceeds {}", self.cfg.max_kl);
                self.policy = with_flat(&self.policy, &theta)?.frozen();
                self.committed_kls.push(kl);
                true
            }
            StepOutcome::Rejected => false,
        };

        let mut value_loss = 0.0;
        for _ in 0..self.cfg.value_epochs {
            for idx in self.rollout.memory.sample_all_indices(self.cfg.value_minibatches)? {
                let s = data.states.select_rows(&idx).to_tensor();
                let ret = Tensor::from_vec(idx.iter().map(|&i| data.returns[i]).collect());
                let v = self.value.model.forward(&s)?.reshape(&[idx.len()])?;
                let loss = v.sub(&ret)?.square().mean()?;
                self.value.apply(&loss.backward()?, None)?;
                value_loss = loss.item();
            }
        }
        Ok((improved, value_loss))
    }
}

impl Agent for TrpoAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Trpo
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
        let out = no_grad(|| policy_sample(&self.policy, states, &mut self.rng))?;
        let values = values_of(&self.value.model, states)?;
        self.rollout.stage(out.log_probs.data().to_vec(), values);
        Ok(out.action_batch())
    }

    fn record_transition(&mut self, t: &Transition<'_>, _step: StepInfo) -> Result<(), AgentError> {
        self.rollout.record(t, &self.value.model, self.cfg.discount)
    }

    fn post_interaction(&mut self, _step: StepInfo) -> Result<Metrics, AgentError> {
        if !self.rollout.is_complete() {
            return Ok(Vec::new());
        }
        let data = self.rollout.finish(
            &self.value.model,
            self.cfg.discount,
            self.cfg.lambda,
            self.cfg.normalize_advantages,
        )?;
        let (improved, value_loss) = self.update(&data)?;
        self.rollout.clear();
        self.updates += 1;
        let kl = if improved { *self.committed_kls.last().expect("committed") } else { 0.0 };
        Ok(vec![
            ("policy_improved", f64::from(u8::from(improved))),
            ("kl", kl),
            ("value_loss", value_loss),
        ])
    }

    fn eval_act(&mut self, states: &Batch) -> Result<Batch, AgentError> {
        policy_mode(&self.policy, states)
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.policy.named_tensors("policy");
        out.extend(self.value.named_tensors("value"));
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
        super::util::finite(&[&self.policy, &self.value.model])
    }
}
