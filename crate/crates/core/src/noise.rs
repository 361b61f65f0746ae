//! Exploration noise for deterministic policies.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoiseError {
    #[error("noise parameter `{name}` must be {rule}, got {value}")]
    Param { name: &'static str, rule: &'static str, value: f64 },
}

/// `len` i.i.d. samples of `N(mean, std²)`.
pub fn gaussian_sample<R: Rng + ?Sized>(len: usize, mean: f64, std: f64, rng: &mut R) -> Result<Vec<f64>, NoiseError> {
    check_std(std)?;
    Ok((0..len)
        .map(|_| mean + std * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

fn check_std(std: f64) -> Result<(), NoiseError> {
    if !(std >= 0.0) {
        return Err(NoiseError::Param {
            name: "std",
            rule: "non-negative",
            value: std,
        });
    }
    Ok(())
}

/// Noise process configuration as it appears in agent config blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Gaussian {
        #[serde(default)]
        mean: f64,
        std: f64,
    },
    OrnsteinUhlenbeck {
        #[serde(default = "default_theta")]
        theta: f64,
        sigma: f64,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default)]
        mu: f64,
    },
}

fn default_theta() -> f64 {
    0.15
}

fn default_dt() -> f64 {
    1e-2
}

/// Discrete-time Ornstein-Uhlenbeck process
/// `x <- x + theta * (mu - x) * dt + sigma * sqrt(dt) * eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct OUState {
    pub value: Vec<f64>,
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
    pub mu: f64,
}

impl OUState {
    /// Starts at `mu` for every entry.
    pub fn new(len: usize, theta: f64, sigma: f64, dt: f64, mu: f64) -> Result<Self, NoiseError> {
        for (name, value) in [("theta", theta), ("sigma", sigma)] {
            if !(value >= 0.0) {
                return Err(NoiseError::Param {
                    name,
                    rule: "non-negative",
                    value,
                });
            }
        }
        if !(dt > 0.0) {
            return Err(NoiseError::Param {
                name: "dt",
                rule: "positive",
                value: dt,
            });
        }
        Ok(Self {
            value: vec![mu; len],
            theta,
            sigma,
            dt,
            mu,
        })
    }

    pub fn reset(&mut self) {
        self.value.fill(self.mu);
    }
}

/// Advances the process one step and returns the new value.
pub fn ou_step<'a, R: Rng + ?Sized>(state: &'a mut OUState, rng: &mut R) -> &'a [f64] {
    let drift = state.theta * state.dt;
    let diffusion = state.sigma * state.dt.sqrt();
    for x in &mut state.value {
        let eps: f64 = rng.sample(StandardNormal);
        *x += drift * (state.mu - *x) + diffusion * eps;
    }
    &state.value
}

/// A configured noise source producing one sample per action entry.
#[derive(Debug, Clone)]
pub enum Noise {
    Gaussian { mean: f64, std: f64 },
    OrnsteinUhlenbeck(OUState),
}

impl Noise {
    pub fn from_config(cfg: &NoiseConfig, len: usize) -> Result<Self, NoiseError> {
        match *cfg {
            NoiseConfig::Gaussian { mean, std } => {
                check_std(std)?;
                Ok(Noise::Gaussian { mean, std })
            }
            NoiseConfig::OrnsteinUhlenbeck { theta, sigma, dt, mu } => {
                Ok(Noise::OrnsteinUhlenbeck(OUState::new(len, theta, sigma, dt, mu)?))
            }
        }
    }

    /// `len` samples; an OU process must have been built with the same length.
    pub fn sample<R: Rng + ?Sized>(&mut self, len: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Noise::Gaussian { mean, std } => gaussian_sample(len, *mean, *std, rng).expect("validated std"),
            Noise::OrnsteinUhlenbeck(s) => {
                debug_assert_eq!(s.value.len(), len);
                ou_step(s, rng).to_vec()
            }
        }
    }
}
