//! Deterministic square grid: start in the top-left cell, reach the
//! bottom-right goal. Every move costs -1; entering the goal pays +10 and
//! ends the episode.

use rand_chacha::ChaCha8Rng;

use super::{EnvError, Kernel, ParamReader, Space};

/// Action encoding.
pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

pub const STEP_REWARD: f64 = -1.0;
pub const GOAL_REWARD: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct GridWorld {
    pub size: usize,
    pub max_episode_steps: usize,
}

impl GridWorld {
    pub(crate) fn from_params(p: &mut ParamReader) -> Result<Self, EnvError> {
        Ok(Self {
            size: p.positive_usize("size", 5)?,
            max_episode_steps: p.positive_usize("max_episode_steps", 100)?,
        })
    }

    pub fn num_states(&self) -> usize {
        self.size * self.size
    }

    pub fn goal(&self) -> usize {
        self.num_states() - 1
    }

    /// Successor cell for `action`; walls leave the agent in place.
    pub fn transition(&self, cell: usize, action: usize) -> usize {
        let (r, c) = (cell / self.size, cell % self.size);
        let (r, c) = match action {
            UP => (r.saturating_sub(1), c),
            RIGHT => (r, (c + 1).min(self.size - 1)),
            DOWN => ((r + 1).min(self.size - 1), c),
            _ => (r, c.saturating_sub(1)),
        };
        r * self.size + c
    }
}

impl Kernel for GridWorld {
    fn state_dim(&self) -> usize {
        1
    }

    fn observation_space(&self) -> Space {
        Space::Discrete { n: self.num_states() }
    }

    fn action_space(&self) -> Space {
        Space::Discrete { n: 4 }
    }

    fn reset_state(&self, _rng: &mut ChaCha8Rng, state: &mut [f64]) {
        state[0] = 0.0;
    }

    fn observe(&self, state: &[f64], obs: &mut [f64]) {
        obs[0] = state[0];
    }

    fn step_state(&self, state: &mut [f64], action: &[f64]) -> (f64, bool) {
        let next = self.transition(state[0] as usize, action[0] as usize);
        state[0] = next as f64;
        if next == self.goal() {
            (GOAL_REWARD, true)
        } else {
            (STEP_REWARD, false)
        }
    }

    fn max_episode_steps(&self) -> Option<usize> {
        Some(self.max_episode_steps)
    }
}
