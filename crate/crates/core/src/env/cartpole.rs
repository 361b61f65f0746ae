//! Classic cart-pole balancing with explicit Euler integration.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Kernel, ParamReader, Space};

pub const GRAVITY: f64 = 9.8;
pub const MASS_CART: f64 = 1.0;
pub const MASS_POLE: f64 = 0.1;
/// Half the pole length.
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const X_THRESHOLD: f64 = 2.4;
pub const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const INIT_BOUND: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct CartPole {
    pub max_episode_steps: usize,
}

impl CartPole {
    pub(crate) fn from_params(p: &mut ParamReader) -> Result<Self, EnvError> {
        Ok(Self {
            max_episode_steps: p.positive_usize("max_episode_steps", 500)?,
        })
    }
}

impl Kernel for CartPole {
    fn state_dim(&self) -> usize {
        4
    }

    fn observation_space(&self) -> Space {
        let high = vec![X_THRESHOLD * 2.0, f64::MAX, THETA_THRESHOLD * 2.0, f64::MAX];
        Space::Box {
            low: high.iter().map(|h| -h).collect(),
            high,
        }
    }

    fn action_space(&self) -> Space {
        Space::Discrete { n: 2 }
    }

    fn reset_state(&self, rng: &mut ChaCha8Rng, state: &mut [f64]) {
        for s in state.iter_mut() {
            *s = rng.gen_range(-INIT_BOUND..INIT_BOUND);
        }
    }

    fn observe(&self, state: &[f64], obs: &mut [f64]) {
        obs.copy_from_slice(state);
    }

    fn step_state(&self, state: &mut [f64], action: &[f64]) -> (f64, bool) {
        let (x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
        let force = if action[0] as usize == 1 { FORCE_MAG } else { -FORCE_MAG };
        let total_mass = MASS_CART + MASS_POLE;
        let polemass_length = MASS_POLE * POLE_HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (POLE_HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos / total_mass;

        state[0] = x + TAU * x_dot;
        state[1] = x_dot + TAU * x_acc;
        state[2] = theta + TAU * theta_dot;
        state[3] = theta_dot + TAU * theta_acc;

        let terminated = state[0] < -X_THRESHOLD
            || state[0] > X_THRESHOLD
            || state[2] < -THETA_THRESHOLD
            || state[2] > THETA_THRESHOLD;
        (1.0, terminated)
    }

    fn max_episode_steps(&self) -> Option<usize> {
        Some(self.max_episode_steps)
    }
}
