//! Agent-environment interaction loops: one agent over the whole vectorized
//! environment, or several agents over disjoint scopes of it stepped in
//! lockstep.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{Agent, AgentError, Metrics, StepInfo, Transition};
use crate::batch::Batch;
use crate::env::{EnvError, StepResult, VecEnv};

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("invalid scopes: {0}")]
    Scope(String),
    #[error("agent {agent} does not match the environment: {reason}")]
    Incompatible { agent: String, reason: String },
    #[error("invalid trainer config `{field}`: {msg}")]
    Config { field: &'static str, msg: String },
    #[error("agent {agent}: {source}")]
    Agent {
        agent: String,
        #[source]
        source: AgentError,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("metric sink: {0}")]
    Sink(#[from] std::io::Error),
}

/// A contiguous block of sub-environment rows `[offset, offset + count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scope {
    pub offset: usize,
    pub count: usize,
}

impl Scope {
    pub fn end(&self) -> usize {
        self.offset + self.count
    }

    pub fn contains(&self, row: usize) -> bool {
        (self.offset..self.end()).contains(&row)
    }
}

/// Splits `num_envs` rows among `num_agents` agents. Explicit counts are used
/// in order; otherwise each agent gets `num_envs / num_agents` rows and the
/// last one also takes the remainder.
pub fn partition_scopes(num_envs: usize, requested: &[usize], num_agents: usize) -> Result<Vec<Scope>, TrainerError> {
    if num_agents == 0 {
        return Err(TrainerError::Scope("no agents".into()));
    }
    let counts = if requested.is_empty() {
        let base = num_envs / num_agents;
        let mut c = vec![base; num_agents];
        c[num_agents - 1] += num_envs % num_agents;
        c
    } else {
        if requested.len() != num_agents {
            return Err(TrainerError::Scope(format!(
                "{} scope counts for {num_agents} agents",
                requested.len()
            )));
        }
        let sum: usize = requested.iter().sum();
        if sum != num_envs {
            return Err(TrainerError::Scope(format!(
                "scope counts sum to {sum} but the environment has {num_envs} rows"
            )));
        }
        requested.to_vec()
    };
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(TrainerError::Scope(format!("scope {i} is empty")));
    }
    let mut offset = 0;
    Ok(counts
        .into_iter()
        .map(|count| {
            let s = Scope { offset, count };
            offset += count;
            s
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    /// Vectorized steps; each advances every sub-environment once.
    pub total_timesteps: usize,
    /// Steps between progress records (mean recent return per agent).
    #[serde(default = "default_interval")]
    pub eval_interval: usize,
    /// Steps between agent update metrics and sink flushes.
    #[serde(default = "default_interval")]
    pub log_interval: usize,
    /// Episodes averaged in progress records and the stop rule.
    #[serde(default = "default_window")]
    pub return_window: usize,
    /// Stop once every agent's mean return over the last `return_window`
    /// episodes reaches this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_return: Option<f64>,
}

fn default_interval() -> usize {
    1000
}

fn default_window() -> usize {
    100
}

impl TrainerConfig {
    pub fn new(total_timesteps: usize) -> Self {
        Self {
            total_timesteps,
            eval_interval: default_interval(),
            log_interval: default_interval(),
            return_window: default_window(),
            stop_at_return: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |field, msg: &str| Err(TrainerError::Config { field, msg: msg.into() });
        if self.eval_interval == 0 {
            return bad("eval_interval", "must be positive");
        }
        if self.log_interval == 0 {
            return bad("log_interval", "must be positive");
        }
        if self.return_window == 0 {
            return bad("return_window", "must be positive");
        }
        if self.total_timesteps > 0 && self.eval_interval > self.total_timesteps {
            return bad("eval_interval", "must not exceed total_timesteps");
        }
        if self.total_timesteps > 0 && self.log_interval > self.total_timesteps {
            return bad("log_interval", "must not exceed total_timesteps");
        }
        Ok(())
    }
}

/// One logged value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub timestep: usize,
    pub agent_id: String,
    pub metric: String,
    pub value: f64,
    /// Seconds since the run started; `None` keeps logs reproducible.
    pub wall_clock: Option<f64>,
}

pub trait MetricSink {
    fn record(&mut self, record: &MetricRecord) -> std::io::Result<()>;

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Keeps every record in memory.
#[derive(Debug, Default, Clone)]
pub struct VecSink {
    pub records: Vec<MetricRecord>,
}

impl MetricSink for VecSink {
    fn record(&mut self, record: &MetricRecord) -> std::io::Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Discards every record.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl MetricSink for NullSink {
    fn record(&mut self, _record: &MetricRecord) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent_id: String,
    pub scope: Scope,
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub std_return: Option<f64>,
    /// Every completed episode's return, in completion order.
    pub episode_returns: Vec<f64>,
    pub updates: usize,
}

impl AgentSummary {
    /// Mean return of the last `n` episodes.
    pub fn recent_mean(&self, n: usize) -> Option<f64> {
        let r = &self.episode_returns[self.episode_returns.len().saturating_sub(n)..];
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub timesteps: usize,
    /// Transitions produced: `timesteps * num_envs`.
    pub env_steps: usize,
    pub agents: Vec<AgentSummary>,
    /// SHA-256 over every metric record and the final agent parameters.
    pub digest: String,
    pub stopped_early: bool,
    pub wall_time_secs: f64,
}

/// Distinct identifier of the `index`-th agent of a run.
pub fn agent_id(index: usize, agent: &dyn Agent) -> String {
    format!("{}_{}", agent.label(), index)
}

/// Per-agent episode accounting shared by both loops.
struct Tracker {
    id: String,
    scope: Scope,
    returns: Vec<f64>,
    lengths: Vec<usize>,
    finished: Vec<f64>,
    latest: Metrics,
    fresh: bool,
    updates: usize,
}

impl Tracker {
    fn new(id: String, scope: Scope) -> Self {
        Self {
            id,
            scope,
            returns: vec![0.0; scope.count],
            lengths: vec![0; scope.count],
            finished: Vec::new(),
            latest: Vec::new(),
            fresh: false,
            updates: 0,
        }
    }

    fn recent_mean(&self, window: usize) -> Option<f64> {
        let r = &self.finished[self.finished.len().saturating_sub(window)..];
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }

    fn summary(&self) -> AgentSummary {
        let n = self.finished.len();
        let mean = (n > 0).then(|| self.finished.iter().sum::<f64>() / n as f64);
        let std = mean.map(|m| (self.finished.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n as f64).sqrt());
        AgentSummary {
            agent_id: self.id.clone(),
            scope: self.scope,
            episodes: n,
            mean_return: mean,
            std_return: std,
            episode_returns: self.finished.clone(),
            updates: self.updates,
        }
    }
}

/// Records, digests and forwards metrics.
struct Log<'a> {
    sink: &'a mut dyn MetricSink,
    hasher: Sha256,
}

impl Log<'_> {
    fn emit(&mut self, timestep: usize, agent_id: &str, metric: &str, value: f64) -> Result<(), TrainerError> {
        let rec = MetricRecord {
            timestep,
            agent_id: agent_id.to_string(),
            metric: metric.to_string(),
            value,
            wall_clock: None,
        };
        self.hasher
            .update(format!("{timestep}\t{agent_id}\t{metric}\t{:016x}\n", value.to_bits()));
        Ok(self.sink.record(&rec)?)
    }
}

struct Loop<'a> {
    cfg: &'a TrainerConfig,
    log: Log<'a>,
    trackers: Vec<Tracker>,
    start: Instant,
}

impl<'a> Loop<'a> {
    fn new(cfg: &'a TrainerConfig, sink: &'a mut dyn MetricSink, trackers: Vec<Tracker>) -> Result<Self, TrainerError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            log: Log {
                sink,
                hasher: Sha256::new(),
            },
            trackers,
            start: Instant::now(),
        })
    }

    /// Books rewards and episode ends for agent `k`'s rows and its update
    /// metrics from step `t`.
    fn after_step(
        &mut self,
        k: usize,
        t: usize,
        rewards: &[f64],
        dones: &[bool],
        metrics: Metrics,
    ) -> Result<(), TrainerError> {
        let tr = &mut self.trackers[k];
        if !metrics.is_empty() {
            tr.latest = metrics;
            tr.fresh = true;
            tr.updates += 1;
        }
        let mut ended = Vec::new();
        for (i, (&r, &d)) in rewards.iter().zip(dones).enumerate() {
            tr.returns[i] += r;
            tr.lengths[i] += 1;
            if d {
                ended.push((tr.returns[i], tr.lengths[i]));
                tr.finished.push(tr.returns[i]);
                tr.returns[i] = 0.0;
                tr.lengths[i] = 0;
            }
        }
        let id = tr.id.clone();
        for (ret, len) in ended {
            self.log.emit(t + 1, &id, "episode_return", ret)?;
            self.log.emit(t + 1, &id, "episode_length", len as f64)?;
        }
        Ok(())
    }

    /// Interval records after step `t`; returns whether the stop rule fired.
    fn end_of_step(&mut self, t: usize) -> Result<bool, TrainerError> {
        let done = t + 1;
        if done % self.cfg.log_interval == 0 {
            for k in 0..self.trackers.len() {
                if self.trackers[k].fresh {
                    let id = self.trackers[k].id.clone();
                    for (name, v) in std::mem::take(&mut self.trackers[k].latest) {
                        self.log.emit(done, &id, name, v)?;
                    }
                    self.trackers[k].fresh = false;
                }
            }
            self.log.sink.flush()?;
        }
        if done % self.cfg.eval_interval == 0 {
            for k in 0..self.trackers.len() {
                if let Some(m) = self.trackers[k].recent_mean(self.cfg.return_window) {
                    let id = self.trackers[k].id.clone();
                    self.log.emit(done, &id, "mean_return", m)?;
                }
            }
        }
        Ok(match self.cfg.stop_at_return {
            Some(target) => self.trackers.iter().all(|tr| {
                tr.finished.len() >= self.cfg.return_window
                    && tr.recent_mean(self.cfg.return_window).is_some_and(|m| m >= target)
            }),
            None => false,
        })
    }

    fn finish(mut self, timesteps: usize, num_envs: usize, agents: &[&dyn Agent], stopped_early: bool) -> Result<RunSummary, TrainerError> {
        self.log.sink.flush()?;
        for a in agents {
            for (name, t) in a.named_tensors() {
                self.log.hasher.update(name.as_bytes());
                for v in t.data() {
                    self.log.hasher.update(v.to_bits().to_le_bytes());
                }
            }
        }
        let digest = self.log.hasher.finalize();
        Ok(RunSummary {
            timesteps,
            env_steps: timesteps * num_envs,
            agents: self.trackers.iter().map(Tracker::summary).collect(),
            digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
            stopped_early,
            wall_time_secs: self.start.elapsed().as_secs_f64(),
        })
    }
}

fn check_compatible(agent: &dyn Agent, id: &str, env: &VecEnv, rows: usize) -> Result<(), TrainerError> {
    let fail = |reason: String| {
        Err(TrainerError::Incompatible {
            agent: id.to_string(),
            reason,
        })
    };
    if agent.observation_space() != env.observation_space() {
        return fail(format!(
            "observation space {:?} vs {:?}",
            agent.observation_space(),
            env.observation_space()
        ));
    }
    if agent.action_space() != env.action_space() {
        return fail(format!("action space {:?} vs {:?}", agent.action_space(), env.action_space()));
    }
    if agent.num_envs() != rows {
        return fail(format!("built for {} rows but its scope has {rows}", agent.num_envs()));
    }
    Ok(())
}

fn check_actions(actions: &Batch, rows: usize, env: &VecEnv, id: &str) -> Result<(), TrainerError> {
    if actions.rows() != rows || actions.cols() != env.action_space().dim() {
        return Err(TrainerError::Incompatible {
            agent: id.to_string(),
            reason: format!(
                "produced a {}x{} action batch, expected {rows}x{}",
                actions.rows(),
                actions.cols(),
                env.action_space().dim()
            ),
        });
    }
    Ok(())
}

fn agent_err(id: &str) -> impl Fn(AgentError) -> TrainerError + '_ {
    move |source| TrainerError::Agent {
        agent: id.to_string(),
        source,
    }
}

/// Flags for rows `range` of a step result.
fn flags(res: &StepResult, range: std::ops::Range<usize>) -> (Vec<bool>, Vec<bool>) {
    range.map(|i| (res.terminated(i), res.truncated(i))).unzip()
}

/// Trains one agent on every row of `env`.
pub fn sequential_train(
    agent: &mut dyn Agent,
    env: &mut VecEnv,
    cfg: &TrainerConfig,
    sink: &mut dyn MetricSink,
) -> Result<RunSummary, TrainerError> {
    let n = env.num_envs();
    let id = agent_id(0, agent);
    check_compatible(agent, &id, env, n)?;
    let scope = Scope { offset: 0, count: n };
    let mut lp = Loop::new(cfg, sink, vec![Tracker::new(id.clone(), scope)])?;
    let mut states = env.reset()?;
    let mut steps = 0;
    let mut stopped = false;
    for t in 0..cfg.total_timesteps {
        let info = StepInfo {
            timestep: t,
            total_timesteps: cfg.total_timesteps,
        };
        let actions = agent.act(&states, info).map_err(agent_err(&id))?;
        check_actions(&actions, n, env, &id)?;
        let res = env.step(&actions)?;
        let next = res.next_observations();
        let (terminated, truncated) = flags(&res, 0..n);
        let transition = Transition {
            states: &states,
            actions: &actions,
            rewards: &res.rewards,
            next_states: &next,
            terminated: &terminated,
            truncated: &truncated,
        };
        agent.record_transition(&transition, info).map_err(agent_err(&id))?;
        let metrics = agent.post_interaction(info).map_err(agent_err(&id))?;
        lp.after_step(0, t, &res.rewards, &res.dones, metrics)?;
        states = res.observations;
        steps = t + 1;
        if lp.end_of_step(t)? {
            stopped = true;
            break;
        }
    }
    lp.finish(steps, n, &[&*agent], stopped)
}

/// Trains several agents on disjoint scopes of one environment. Each step,
/// agents act in list order on their rows, the joint action batch steps
/// the environment once, and results are routed back by scope.
pub fn simultaneous_train(
    agents: &mut [Box<dyn Agent>],
    scopes: &[Scope],
    env: &mut VecEnv,
    cfg: &TrainerConfig,
    sink: &mut dyn MetricSink,
) -> Result<RunSummary, TrainerError> {
    let n = env.num_envs();
    if agents.len() != scopes.len() {
        return Err(TrainerError::Scope(format!("{} agents but {} scopes", agents.len(), scopes.len())));
    }
    let mut offset = 0;
    for s in scopes {
        if s.offset != offset || s.count == 0 {
            return Err(TrainerError::Scope(format!("scope {s:?} does not continue at row {offset}")));
        }
        offset = s.end();
    }
    if offset != n {
        return Err(TrainerError::Scope(format!("scopes cover {offset} of {n} rows")));
    }
    let ids: Vec<String> = agents.iter().enumerate().map(|(i, a)| agent_id(i, a.as_ref())).collect();
    for ((a, s), id) in agents.iter().zip(scopes).zip(&ids) {
        check_compatible(a.as_ref(), id, env, s.count)?;
    }
    let trackers = ids.iter().zip(scopes).map(|(id, s)| Tracker::new(id.clone(), *s)).collect();
    let mut lp = Loop::new(cfg, sink, trackers)?;
    let mut states = env.reset()?;
    let mut steps = 0;
    let mut stopped = false;
    for t in 0..cfg.total_timesteps {
        let info = StepInfo {
            timestep: t,
            total_timesteps: cfg.total_timesteps,
        };
        let mut parts = Vec::with_capacity(agents.len());
        let mut scoped_states = Vec::with_capacity(agents.len());
        for ((a, s), id) in agents.iter_mut().zip(scopes).zip(&ids) {
            let st = states.slice_rows(s.offset..s.end());
            let actions = a.act(&st, info).map_err(agent_err(id))?;
            check_actions(&actions, s.count, env, id)?;
            parts.push(actions);
            scoped_states.push(st);
        }
        let joint = Batch::concat_rows(&parts);
        let res = env.step(&joint)?;
        let next = res.next_observations();
        for (k, ((a, s), id)) in agents.iter_mut().zip(scopes).zip(&ids).enumerate() {
            let range = s.offset..s.end();
            let (terminated, truncated) = flags(&res, range.clone());
            let next_s = next.slice_rows(range.clone());
            let transition = Transition {
                states: &scoped_states[k],
                actions: &parts[k],
                rewards: &res.rewards[range.clone()],
                next_states: &next_s,
                terminated: &terminated,
                truncated: &truncated,
            };
            a.record_transition(&transition, info).map_err(agent_err(id))?;
            let metrics = a.post_interaction(info).map_err(agent_err(id))?;
            lp.after_step(k, t, &res.rewards[range.clone()], &res.dones[range], metrics)?;
        }
        states = res.observations;
        steps = t + 1;
        if lp.end_of_step(t)? {
            stopped = true;
            break;
        }
    }
    let refs: Vec<&dyn Agent> = agents.iter().map(|a| a.as_ref()).collect();
    lp.finish(steps, n, &refs, stopped)
}

/// Greedy-action returns of the first `episodes` episodes completed on `env`.
pub fn evaluate(agent: &mut dyn Agent, env: &mut VecEnv, episodes: usize, max_steps: usize) -> Result<Vec<f64>, TrainerError> {
    let id = agent_id(0, agent);
    check_compatible(agent, &id, env, env.num_envs())?;
    let mut states = env.reset()?;
    let mut running = vec![0.0; env.num_envs()];
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..max_steps {
        if out.len() >= episodes {
            break;
        }
        let actions = agent.eval_act(&states).map_err(agent_err(&id))?;
        let res = env.step(&actions)?;
        for (i, (&r, &d)) in res.rewards.iter().zip(&res.dones).enumerate() {
            running[i] += r;
            if d {
                out.push(running[i]);
                running[i] = 0.0;
            }
        }
        states = res.observations;
    }
    out.truncate(episodes);
    Ok(out)
}

#[cfg(test)]
mod tests;
