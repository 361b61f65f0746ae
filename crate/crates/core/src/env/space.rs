use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;

/// Observation or action space of one sub-environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Space {
    /// Integers `0..n`, carried as a single column.
    Discrete { n: usize },
    /// Real vectors bounded elementwise by `low < high`.
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl Space {
    pub fn discrete(n: usize) -> Result<Self, EnvError> {
        if n == 0 {
            return Err(EnvError::InvalidSpace("discrete space needs n >= 1".into()));
        }
        Ok(Space::Discrete { n })
    }

    pub fn bounded(low: Vec<f64>, high: Vec<f64>) -> Result<Self, EnvError> {
        if low.is_empty() || low.len() != high.len() {
            return Err(EnvError::InvalidSpace(format!(
                "box bounds have lengths {} and {}",
                low.len(),
                high.len()
            )));
        }
        if low.iter().zip(&high).any(|(l, h)| !(l < h)) {
            return Err(EnvError::InvalidSpace("box needs low < high in every dimension".into()));
        }
        Ok(Space::Box { low, high })
    }

    /// Number of columns a batch row occupies.
    pub fn dim(&self) -> usize {
        match self {
            Space::Discrete { .. } => 1,
            Space::Box { low, .. } => low.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Space::Discrete { .. })
    }

    /// `n` for discrete spaces.
    pub fn n(&self) -> Option<usize> {
        match self {
            Space::Discrete { n } => Some(*n),
            Space::Box { .. } => None,
        }
    }

    pub fn bounds(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Space::Box { low, high } => Some((low, high)),
            Space::Discrete { .. } => None,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Space::Discrete { n } => {
                x.len() == 1 && x[0] >= 0.0 && x[0].fract() == 0.0 && (x[0] as usize) < *n
            }
            Space::Box { low, high } => {
                x.len() == low.len() && x.iter().zip(low.iter().zip(high)).all(|(v, (l, h))| v >= l && v <= h)
            }
        }
    }

    /// Uniform sample from the space.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Space::Discrete { n } => vec![rng.gen_range(0..*n) as f64],
            Space::Box { low, high } => low.iter().zip(high).map(|(l, h)| rng.gen_range(*l..*h)).collect(),
        }
    }
}
