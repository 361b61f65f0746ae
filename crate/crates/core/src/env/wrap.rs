use crate::batch::Batch;

use super::{Backend, EnvError, EnvParams, Info, Space, StepResult, VecEnv, TERMINAL_OBSERVATION, TRUNCATED};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Reset,
    Step,
}

/// Output of an external environment step. Flat row-major arrays with one
/// row per sub-environment (a single row for unbatched sources).
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalStep {
    pub observations: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub truncated: Vec<bool>,
}

/// An environment implemented outside this crate.
///
/// Sources report which methods they provide through [`ExternalEnv::provides`];
/// [`wrap`] refuses sources lacking `reset` or `step`. Batched sources
/// (`num_envs() == Some(n)`) must reset finished rows themselves; single
/// sources are reset by the wrapper.
pub trait ExternalEnv: Send {
    fn observation_space(&self) -> Space;
    fn action_space(&self) -> Space;

    /// `None` for an unbatched environment.
    fn num_envs(&self) -> Option<usize> {
        None
    }

    fn provides(&self, _method: Method) -> bool {
        true
    }

    fn reset(&mut self) -> Option<Vec<f64>> {
        None
    }

    fn step(&mut self, _actions: &[f64]) -> Option<ExternalStep> {
        None
    }
}

/// Puts a uniform [`VecEnv`] facade in front of an external environment.
pub fn wrap(source: Box<dyn ExternalEnv>) -> Result<VecEnv, EnvError> {
    for (m, label) in [(Method::Reset, "reset"), (Method::Step, "step")] {
        if !source.provides(m) {
            return Err(EnvError::MissingMethod(label));
        }
    }
    let observation_space = source.observation_space();
    let action_space = source.action_space();
    let (num_envs, batched) = match source.num_envs() {
        Some(0) => return Err(EnvError::NoEnvs),
        Some(n) => (n, true),
        None => (1, false),
    };
    Ok(VecEnv {
        name: "wrapped".into(),
        num_envs,
        device: "cpu".into(),
        params: EnvParams::new(),
        backend: Box::new(Wrapped {
            obs_dim: observation_space.dim(),
            num_envs,
            batched,
            source,
        }),
        observation_space,
        action_space,
    })
}

struct Wrapped {
    source: Box<dyn ExternalEnv>,
    num_envs: usize,
    obs_dim: usize,
    batched: bool,
}

impl Wrapped {
    fn checked_obs(&self, obs: Vec<f64>) -> Result<Batch, EnvError> {
        if obs.len() != self.num_envs * self.obs_dim {
            return Err(EnvError::Malformed(format!(
                "{} observation values, expected {}",
                obs.len(),
                self.num_envs * self.obs_dim
            )));
        }
        Ok(Batch::new(self.num_envs, self.obs_dim, obs))
    }
}

impl Backend for Wrapped {
    fn reset(&mut self) -> Result<Batch, EnvError> {
        let obs = self.source.reset().ok_or(EnvError::MissingMethod("reset"))?;
        self.checked_obs(obs)
    }

    fn step(&mut self, actions: &Batch) -> Result<StepResult, EnvError> {
        let out = self.source.step(actions.data()).ok_or(EnvError::MissingMethod("step"))?;
        let n = self.num_envs;
        if out.rewards.len() != n || out.dones.len() != n || out.truncated.len() != n {
            return Err(EnvError::Malformed("reward/done arrays do not match num_envs".into()));
        }
        let mut observations = self.checked_obs(out.observations)?;
        let mut infos = vec![Info::default(); n];
        let dones: Vec<bool> = out.dones.iter().zip(&out.truncated).map(|(d, t)| *d || *t).collect();
        for i in 0..n {
            if out.truncated[i] && !out.dones[i] {
                infos[i].insert(TRUNCATED, vec![1.0]);
            }
        }
        if !self.batched && dones[0] {
            infos[0].insert(TERMINAL_OBSERVATION, observations.row(0).to_vec());
            let fresh = self.source.reset().ok_or(EnvError::MissingMethod("reset"))?;
            observations = self.checked_obs(fresh)?;
        }
        Ok(StepResult {
            observations,
            rewards: out.rewards,
            dones,
            infos,
        })
    }
}
