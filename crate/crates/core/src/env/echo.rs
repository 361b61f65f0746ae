//! Test environment that reflects every action back: the next observation
//! equals the action, the reward is its first component and the `action`
//! info entry carries the exact row received.

use rand_chacha::ChaCha8Rng;

use super::{EnvError, Kernel, ParamReader, Space};

pub const BOUND: f64 = 1e9;

#[derive(Debug, Clone)]
pub struct Echo {
    pub action_dim: usize,
    /// 0 means episodes never end.
    pub max_episode_steps: usize,
}

impl Echo {
    pub(crate) fn from_params(p: &mut ParamReader) -> Result<Self, EnvError> {
        Ok(Self {
            action_dim: p.positive_usize("action_dim", 1)?,
            max_episode_steps: p.usize("max_episode_steps", 0)?,
        })
    }

    fn space(&self) -> Space {
        Space::Box {
            low: vec![-BOUND; self.action_dim],
            high: vec![BOUND; self.action_dim],
        }
    }
}

impl Kernel for Echo {
    fn state_dim(&self) -> usize {
        self.action_dim
    }

    fn observation_space(&self) -> Space {
        self.space()
    }

    fn action_space(&self) -> Space {
        self.space()
    }

    fn reset_state(&self, _rng: &mut ChaCha8Rng, state: &mut [f64]) {
        state.iter_mut().for_each(|s| *s = 0.0);
    }

    fn observe(&self, state: &[f64], obs: &mut [f64]) {
        obs.copy_from_slice(state);
    }

    fn step_state(&self, state: &mut [f64], action: &[f64]) -> (f64, bool) {
        state.copy_from_slice(action);
        (action[0], false)
    }

    fn max_episode_steps(&self) -> Option<usize> {
        (self.max_episode_steps > 0).then_some(self.max_episode_steps)
    }

    fn echoes_actions(&self) -> bool {
        true
    }
}
