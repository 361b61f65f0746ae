//! Torque-controlled inverted pendulum swing-up.
//!
//! State is `(theta, theta_dot)` with `theta = 0` upright; the observation is
//! `(cos theta, sin theta, theta_dot)`. Reward is
//! `-(theta^2 + 0.1 theta_dot^2 + 0.001 u^2)` with `theta` wrapped to `[-pi, pi)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Kernel, ParamReader, Space};

pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const DT: f64 = 0.05;
pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct Pendulum {
    pub max_episode_steps: usize,
}

impl Pendulum {
    pub(crate) fn from_params(p: &mut ParamReader) -> Result<Self, EnvError> {
        Ok(Self {
            max_episode_steps: p.positive_usize("max_episode_steps", 200)?,
        })
    }
}

pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Kernel for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        3
    }

    fn observation_space(&self) -> Space {
        Space::Box {
            low: vec![-1.0, -1.0, -MAX_SPEED],
            high: vec![1.0, 1.0, MAX_SPEED],
        }
    }

    fn action_space(&self) -> Space {
        Space::Box {
            low: vec![-MAX_TORQUE],
            high: vec![MAX_TORQUE],
        }
    }

    fn reset_state(&self, rng: &mut ChaCha8Rng, state: &mut [f64]) {
        state[0] = rng.gen_range(-PI..PI);
        state[1] = rng.gen_range(-1.0..1.0);
    }

    fn observe(&self, state: &[f64], obs: &mut [f64]) {
        let (sin, cos) = state[0].sin_cos();
        obs[0] = cos;
        obs[1] = sin;
        obs[2] = state[1];
    }

    fn step_state(&self, state: &mut [f64], action: &[f64]) -> (f64, bool) {
        let (th, thdot) = (state[0], state[1]);
        let u = action[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        let th_n = angle_normalize(th);
        let cost = th_n * th_n + 0.1 * thdot * thdot + 0.001 * u * u;

        let new_thdot = (thdot
            + (3.0 * GRAVITY / (2.0 * LENGTH) * th.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u) * DT)
            .clamp(-MAX_SPEED, MAX_SPEED);
        state[0] = th + new_thdot * DT;
        state[1] = new_thdot;
        (-cost, false)
    }

    fn max_episode_steps(&self) -> Option<usize> {
        Some(self.max_episode_steps)
    }
}
