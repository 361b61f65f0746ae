//! Gradient-based optimizers over parameter tensors.

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub learning_rate: f64,
}

impl OptimState {
    pub fn new(params: &[Tensor], learning_rate: f64) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect::<Vec<_>>();
        Self {
            first_moment: zeros(),
            second_moment: zeros(),
            step_count: 0,
            learning_rate,
        }
    }
}

/// One bias-corrected Adam update. Returns fresh parameter leaves.
pub fn adam_step(
    params: &[Tensor],
    grads: &[Vec<f64>],
    state: &mut OptimState,
    config: &AdamConfig,
) -> Result<Vec<Tensor>> {
    let aligned = params.len() == grads.len()
        && params.len() == state.first_moment.len()
        && params
            .iter()
            .zip(grads)
            .zip(&state.first_moment)
            .all(|((p, g), m)| p.numel() == g.len() && m.len() == g.len());
    if !aligned {
        return Err(TensorError::ShapeMismatch {
            op: "adam_step",
            lhs: params.iter().map(Tensor::numel).collect(),
            rhs: grads.iter().map(Vec::len).collect(),
        });
    }
    if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
        return Err(TensorError::Invalid {
            op: "adam_step",
            msg: format!("betas must lie in [0, 1), got {} and {}", config.beta1, config.beta2),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let lr = state.learning_rate;

    let mut out = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        let (m, v) = (&mut state.first_moment[i], &mut state.second_moment[i]);
        let mut data = p.data().to_vec();
        for (j, &g) in grads[i].iter().enumerate() {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            data[j] -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
        out.push(Tensor::parameter(p.shape(), data)?);
    }
    Ok(out)
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm measured before scaling.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= s);
    }
    norm
}

/// Adam bound to one parameter list, reading gradients from the leaves.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: OptimState,
}

impl Adam {
    pub fn new(params: &[Tensor], learning_rate: f64) -> Self {
        Self {
            config: AdamConfig::default(),
            state: OptimState::new(params, learning_rate),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.state.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.state.learning_rate = lr;
    }

    /// Steps every parameter using its accumulated `grad`, optionally
    /// clipping the global norm first. Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut [Tensor], max_grad_norm: Option<f64>) -> Result<f64> {
        let mut grads: Vec<Vec<f64>> = params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        let norm = match max_grad_norm {
            Some(max) => clip_grad_norm(&mut grads, max),
            None => grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt(),
        };
        let updated = adam_step(params, &grads, &mut self.state, &self.config)?;
        params.clone_from_slice(&updated);
        Ok(norm)
    }
}
