use rand::Rng;

use super::heads::argmax;
use super::{HeadKind, Model, ModelError};

/// Row-major `[num_states × num_actions]` action values.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn check(&self, state: usize) -> Result<(), ModelError> {
        if state >= self.num_states {
            return Err(ModelError::State {
                state,
                num_states: self.num_states,
            });
        }
        Ok(())
    }

    pub fn row(&self, state: usize) -> Result<&[f64], ModelError> {
        self.check(state)?;
        Ok(&self.values[state * self.num_actions..(state + 1) * self.num_actions])
    }

    pub fn get(&self, state: usize, action: usize) -> Result<f64, ModelError> {
        Ok(self.row(state)?[action])
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) -> Result<(), ModelError> {
        self.check(state)?;
        self.values[state * self.num_actions + action] = value;
        Ok(())
    }

    /// First maximal action of `state`.
    pub fn greedy(&self, state: usize) -> Result<usize, ModelError> {
        Ok(argmax(self.row(state)?))
    }

    pub fn max_value(&self, state: usize) -> Result<f64, ModelError> {
        Ok(self.row(state)?.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Epsilon-greedy actions; one uniform draw per state decides exploration.
pub fn tabular_act<R: Rng + ?Sized>(
    model: &Model,
    states: &[usize],
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<usize>, ModelError> {
    let table = model.q_table().ok_or_else(|| ModelError::Head {
        head: model.head(),
        reason: format!("a {:?} action path", HeadKind::Tabular),
    })?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(ModelError::Spec(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    states
        .iter()
        .map(|&s| {
            let greedy = table.greedy(s)?;
            if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                Ok(rng.gen_range(0..table.num_actions()))
            } else {
                Ok(greedy)
            }
        })
        .collect()
}
