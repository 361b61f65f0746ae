use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{HeadKind, Model, ModelError};
use crate::batch::Batch;
use crate::tensor::Tensor;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const SQUASH_EPS: f64 = 1e-6;

/// Actions plus the differentiable log-probabilities and entropies (shape `[B]`).
///
/// For a categorical head `actions` holds indices as `[B × 1]` values. For
/// the squashed head `entropy` is the single-sample estimate `-log_prob`.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub actions: Tensor,
    pub log_probs: Tensor,
    pub entropy: Tensor,
}

impl PolicyOutput {
    pub fn action_batch(&self) -> Batch {
        Batch::from_tensor(&self.actions).expect("actions are 2-D")
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CategoricalMode<'a> {
    Sample,
    Argmax,
    /// Evaluate the given actions instead of choosing new ones.
    Given(&'a [usize]),
}

fn expect_head(model: &Model, head: HeadKind) -> Result<(), ModelError> {
    if model.head() != head {
        return Err(ModelError::Head {
            head: model.head(),
            reason: format!("a {head:?} action path"),
        });
    }
    Ok(())
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()
}

/// Index of the first maximal entry.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn categorical_act<R: Rng + ?Sized>(
    model: &Model,
    obs: &Batch,
    mode: CategoricalMode<'_>,
    rng: &mut R,
) -> Result<PolicyOutput, ModelError> {
    expect_head(model, HeadKind::Categorical)?;
    let logits = model.forward(&obs.to_tensor())?;
    let log_p = logits.log_softmax()?;
    let n = model.spec().output_dim;
    let rows = obs.rows();
    let actions: Vec<usize> = match mode {
        CategoricalMode::Given(a) => a.to_vec(),
        CategoricalMode::Argmax => log_p.data().chunks(n).map(argmax).collect(),
        CategoricalMode::Sample => log_p
            .data()
            .chunks(n)
            .map(|row| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, lp) in row.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        return i;
                    }
                }
                n - 1
            })
            .collect(),
    };
    let log_probs = log_p.gather_rows(&actions)?;
    let entropy = log_p.exp().mul(&log_p)?.sum_last()?.neg();
    let actions = Tensor::matrix(rows, 1, actions.iter().map(|&a| a as f64).collect())?;
    Ok(PolicyOutput {
        actions,
        log_probs,
        entropy,
    })
}

/// Diagonal Gaussian with the model's state-independent `log_std`.
///
/// Samples `mean + exp(log_std) * eps` unless `taken` is given, in which case
/// the log-probability of those actions is evaluated.
pub fn gaussian_act<R: Rng + ?Sized>(
    model: &Model,
    obs: &Batch,
    taken: Option<&Batch>,
    rng: &mut R,
) -> Result<PolicyOutput, ModelError> {
    expect_head(model, HeadKind::Gaussian)?;
    let mean = model.forward(&obs.to_tensor())?;
    let log_std = model.log_std().expect("gaussian head").clamp(LOG_STD_MIN, LOG_STD_MAX)?;
    let (rows, d) = (obs.rows(), model.spec().output_dim);
    let actions = match taken {
        Some(a) => a.to_tensor(),
        None => {
            let eps = normal_matrix(rows, d, rng);
            let std: Vec<f64> = log_std.data().iter().map(|l| l.exp()).collect();
            let data = mean
                .data()
                .iter()
                .zip(eps)
                .enumerate()
                .map(|(i, (m, e))| m + std[i % d] * e)
                .collect();
            Tensor::matrix(rows, d, data)?
        }
    };
    let z = actions.sub(&mean)?.div(&log_std.exp())?;
    let log_probs = z
        .square()
        .scale(-0.5)
        .sub(&log_std)?
        .add_scalar(-0.5 * (2.0 * PI).ln())
        .sum_last()?;
    let entropy = log_std
        .add_scalar(0.5 + 0.5 * (2.0 * PI).ln())
        .sum()
        .broadcast_to(&[rows])?;
    Ok(PolicyOutput {
        actions: actions.detach(),
        log_probs,
        entropy,
    })
}

fn affine_bounds(model: &Model) -> Option<(Tensor, Tensor)> {
    model.spec().output_scale.as_ref().map(|b| {
        let half = b.iter().map(|[lo, hi]| 0.5 * (hi - lo)).collect();
        let mid = b.iter().map(|[lo, hi]| 0.5 * (hi + lo)).collect();
        (Tensor::from_vec(half), Tensor::from_vec(mid))
    })
}

/// Reparameterized tanh-squashed Gaussian. The network outputs the mean and
/// `log_std` side by side; `deterministic` uses the mean.
///
/// The returned actions keep their graph so that gradients flow from a
/// critic back into the policy.
pub fn squashed_gaussian_act<R: Rng + ?Sized>(
    model: &Model,
    obs: &Batch,
    deterministic: bool,
    rng: &mut R,
) -> Result<PolicyOutput, ModelError> {
    expect_head(model, HeadKind::SquashedGaussian)?;
    let out = model.forward(&obs.to_tensor())?;
    let (rows, d) = (obs.rows(), model.spec().output_dim);
    let mean = out.slice_cols(0, d)?;
    let log_std = out.slice_cols(d, 2 * d)?.clamp(LOG_STD_MIN, LOG_STD_MAX)?;
    let eps = if deterministic {
        vec![0.0; rows * d]
    } else {
        normal_matrix(rows, d, rng)
    };
    let eps = Tensor::matrix(rows, d, eps)?;
    let pre = mean.add(&log_std.exp().mul(&eps)?)?;
    let squashed = pre.tanh();
    let (half, mid) = affine_bounds(model).expect("squashed head has bounds");
    let actions = squashed.mul(&half)?.add(&mid)?;
    let gauss = eps
        .square()
        .scale(-0.5)
        .sub(&log_std)?
        .add_scalar(-0.5 * (2.0 * PI).ln())
        .sum_last()?;
    let correction = squashed.square().neg().add_scalar(1.0 + SQUASH_EPS).log()?.sum_last()?;
    let log_probs = gauss.sub(&correction)?;
    let entropy = log_probs.neg();
    Ok(PolicyOutput {
        actions,
        log_probs,
        entropy,
    })
}

/// Raw output, or `tanh` followed by the affine map into the bounds when the
/// spec declares them. The result keeps its graph.
pub fn deterministic_act(model: &Model, obs: &Batch) -> Result<Tensor, ModelError> {
    expect_head(model, HeadKind::Deterministic)?;
    let out = model.forward(&obs.to_tensor())?;
    match affine_bounds(model) {
        Some((half, mid)) => Ok(out.tanh().mul(&half)?.add(&mid)?),
        None => Ok(out),
    }
}
