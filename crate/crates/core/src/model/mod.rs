//! Function approximators and the policy/value heads built on them.

mod heads;
mod tabular;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::checkpoint::{self, CheckpointError};
use crate::tensor::{Tensor, TensorError};

pub use heads::{
    categorical_act, deterministic_act, gaussian_act, squashed_gaussian_act, CategoricalMode, PolicyOutput,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use tabular::{tabular_act, QTable};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("{head:?} head cannot be used with {reason}")]
    Head { head: HeadKind, reason: String },
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("state index {state} out of range for {num_states} states")]
    State { state: usize, num_states: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

/// One activation for every hidden layer, or one per layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Activations {
    Uniform(Activation),
    PerLayer(Vec<Activation>),
}

impl Activations {
    pub fn get(&self, layer: usize) -> Activation {
        match self {
            Activations::Uniform(a) => *a,
            Activations::PerLayer(v) => v[layer],
        }
    }
}

/// Network shape. `input_dim` and `output_dim` are usually filled in from
/// the environment's spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default)]
    pub output_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activations,
    /// Per-output `[low, high]` bounds for bounded actions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_scale: Option<Vec<[f64; 2]>>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_activation() -> Activations {
    Activations::Uniform(Activation::Tanh)
}

impl ModelSpec {
    pub fn new(input_dim: usize, output_dim: usize, hidden: &[usize], activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden: hidden.to_vec(),
            activation: Activations::Uniform(activation),
            output_scale: None,
        }
    }

    pub fn with_output_scale(mut self, bounds: Vec<[f64; 2]>) -> Self {
        self.output_scale = Some(bounds);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(ModelError::Spec("input_dim and output_dim must be positive".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(ModelError::Spec("hidden widths must be at least 1".into()));
        }
        if let Activations::PerLayer(v) = &self.activation {
            if v.len() != self.hidden.len() {
                return Err(ModelError::Spec(format!(
                    "{} activations for {} hidden layers",
                    v.len(),
                    self.hidden.len()
                )));
            }
        }
        if let Some(bounds) = &self.output_scale {
            if bounds.len() != self.output_dim {
                return Err(ModelError::Spec(format!(
                    "output_scale has {} bounds for output_dim {}",
                    bounds.len(),
                    self.output_dim
                )));
            }
            if bounds.iter().any(|[lo, hi]| !(lo < hi)) {
                return Err(ModelError::Spec("output_scale bounds need low < high".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Categorical,
    /// Diagonal Gaussian with a learnable, state-independent `log_std`.
    Gaussian,
    /// Network outputs mean and `log_std`; samples are squashed by `tanh`
    /// into the `output_scale` bounds.
    SquashedGaussian,
    Deterministic,
    Tabular,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    head: HeadKind,
    /// `[w0, b0, w1, b1, ..., (log_std)]`
    params: Vec<Tensor>,
    layers: usize,
    q_table: Option<QTable>,
}

/// Builds a model with uniform fan-in initialization, reproducible under `seed`.
pub fn instantiate_model(spec: &ModelSpec, head: HeadKind, seed: u64) -> Result<Model, ModelError> {
    spec.validate()?;
    let head_err = |reason: &str| ModelError::Head {
        head,
        reason: reason.to_string(),
    };
    match head {
        HeadKind::Categorical | HeadKind::Tabular if spec.output_scale.is_some() => {
            return Err(head_err("output_scale"))
        }
        HeadKind::SquashedGaussian if spec.output_scale.is_none() => {
            return Err(head_err("missing output_scale"))
        }
        HeadKind::Tabular if !spec.hidden.is_empty() => return Err(head_err("hidden layers")),
        _ => {}
    }
    if head == HeadKind::Tabular {
        return Ok(Model {
            spec: spec.clone(),
            head,
            params: Vec::new(),
            layers: 0,
            q_table: Some(QTable::zeros(spec.input_dim, spec.output_dim)),
        });
    }

    let net_out = if head == HeadKind::SquashedGaussian {
        2 * spec.output_dim
    } else {
        spec.output_dim
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut widths = vec![spec.input_dim];
    widths.extend(&spec.hidden);
    widths.push(net_out);
    let mut params = Vec::new();
    for w in widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        let bias = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        params.push(Tensor::parameter(&[fan_in, fan_out], weight)?);
        params.push(Tensor::parameter(&[fan_out], bias)?);
    }
    if head == HeadKind::Gaussian {
        params.push(Tensor::parameter(&[spec.output_dim], vec![0.0; spec.output_dim])?);
    }
    Ok(Model {
        spec: spec.clone(),
        head,
        params,
        layers: widths.len() - 1,
        q_table: None,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    /// Trainable tensors, in a fixed order.
    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable access for optimizers, which replace parameters wholesale.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum::<usize>()
            + self.q_table.as_ref().map_or(0, |q| q.values().len())
    }

    pub fn q_table(&self) -> Option<&QTable> {
        self.q_table.as_ref()
    }

    pub fn q_table_mut(&mut self) -> Option<&mut QTable> {
        self.q_table.as_mut()
    }

    /// Learnable state-independent `log_std` of a Gaussian head.
    pub fn log_std(&self) -> Option<&Tensor> {
        (self.head == HeadKind::Gaussian).then(|| self.params.last().expect("gaussian has log_std"))
    }

    /// Raw network output for a `[batch × input_dim]` input.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        if self.head == HeadKind::Tabular {
            return Err(ModelError::Head {
                head: self.head,
                reason: "a network forward pass".into(),
            });
        }
        let mut h = input.clone();
        for l in 0..self.layers {
            h = h.matmul(&self.params[2 * l])?.add(&self.params[2 * l + 1])?;
            if l + 1 < self.layers {
                h = match self.spec.activation.get(l) {
                    Activation::Tanh => h.tanh(),
                    Activation::Relu => h.relu(),
                };
            }
        }
        Ok(h)
    }

    /// A copy whose parameters do not require gradients (for target networks).
    pub fn frozen(&self) -> Model {
        let mut m = self.clone();
        m.params = self.params.iter().map(Tensor::detach).collect();
        m
    }

    /// A copy with fresh gradient-requiring parameters.
    pub fn trainable(&self) -> Model {
        let mut m = self.clone();
        m.params = self.params.iter().map(Tensor::to_parameter).collect();
        m
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.params.len());
        for l in 0..self.layers {
            names.push(format!("layer{l}.weight"));
            names.push(format!("layer{l}.bias"));
        }
        if self.head == HeadKind::Gaussian {
            names.push("log_std".into());
        }
        names
    }

    /// Parameters (and the Q-table) as named tensors under `prefix`.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .param_names()
            .into_iter()
            .zip(&self.params)
            .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
            .collect();
        if let Some(q) = &self.q_table {
            let t = Tensor::new(&[q.num_states(), q.num_actions()], q.values().to_vec())
                .expect("table geometry is consistent");
            out.push((format!("{prefix}.q_table"), t));
        }
        out
    }

    /// Restores parameters saved by [`Model::named_tensors`].
    pub fn load_named(&mut self, tensors: &[(String, Tensor)], prefix: &str) -> Result<(), ModelError> {
        for (i, name) in self.param_names().into_iter().enumerate() {
            let shape = self.params[i].shape().to_vec();
            let t = checkpoint::take(tensors, &format!("{prefix}.{name}"), &shape)?;
            self.params[i] = if self.params[i].requires_grad() {
                t.to_parameter()
            } else {
                t.detach()
            };
        }
        if let Some(q) = &mut self.q_table {
            let t = checkpoint::take(tensors, &format!("{prefix}.q_table"), &[q.num_states(), q.num_actions()])?;
            q.values_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    fn check_same_architecture(&self, other: &Model) -> Result<(), ModelError> {
        let shapes = |m: &Model| m.params.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>();
        let tables = |m: &Model| m.q_table.as_ref().map(|q| (q.num_states(), q.num_actions()));
        if self.head != other.head || shapes(self) != shapes(other) || tables(self) != tables(other) {
            return Err(ModelError::Architecture(format!(
                "{:?} {:?} vs {:?} {:?}",
                self.head,
                shapes(self),
                other.head,
                shapes(other)
            )));
        }
        Ok(())
    }
}

/// `target <- tau * source + (1 - tau) * target`, parameter by parameter.
pub fn polyak_update(target: &mut Model, source: &Model, tau: f64) -> Result<(), ModelError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(ModelError::Spec(format!("tau must lie in [0, 1], got {tau}")));
    }
    target.check_same_architecture(source)?;
    for (t, s) in target.params.iter_mut().zip(&source.params) {
        let data = if tau == 1.0 {
            s.data().to_vec()
        } else {
            t.data().iter().zip(s.data()).map(|(tv, sv)| tau * sv + (1.0 - tau) * tv).collect()
        };
        let fresh = Tensor::new(t.shape(), data)?;
        *t = if t.requires_grad() { fresh.to_parameter() } else { fresh };
    }
    if let (Some(tq), Some(sq)) = (&mut target.q_table, &source.q_table) {
        for (tv, sv) in tq.values_mut().iter_mut().zip(sq.values()) {
            *tv = tau * sv + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}
