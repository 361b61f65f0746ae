//! Config-driven experiments: TOML experiment files, JSON-lines metric logs,
//! checkpoints, log reports and memory statistics.

mod config;
mod metrics;
mod stats;

use std::fs;
use std::path::{Path, PathBuf};

use crate::agents::{build_agent, Agent, AgentError};
use crate::env::{make_env, EnvError};
use crate::memory::{ExportFormat, Memory, MemoryError, SharedMemory};
use crate::tensor::checkpoint::{self, CheckpointError};
use crate::trainer::{agent_id, evaluate, simultaneous_train, RunSummary, TrainerError};

pub use config::{bundled, load_config, parse_config, AgentEntry, ConfigError, EnvConfig, ExperimentConfig, BUNDLED};
pub use metrics::{read_metrics, report, write_report_csv, JsonlSink, LogHeader, ReportRow};
pub use stats::{memory_stats, write_memory_stats_csv, ColumnStats};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Log(String),
}

impl RunError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
        move |source| RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Command-line overrides of an experiment config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub outdir: Option<PathBuf>,
    pub timesteps: Option<usize>,
    /// Suppresses progress lines on stderr.
    pub headless: bool,
}

/// What a finished training run left behind.
#[derive(Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub outdir: PathBuf,
    pub metrics_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    /// Transitions held by the shared memory, when agents share one.
    pub shared_memory_stored: Option<usize>,
}

/// Seed of the `index`-th agent of a run seeded with `seed`.
pub fn agent_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add((index as u64).wrapping_mul(7919).wrapping_add(1))
}

/// Builds the agents of `cfg` and the memory shared between the ones that
/// ask for it.
pub fn build_agents(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<Box<dyn Agent>>, Option<SharedMemory>), RunError> {
    let probe = make_env(&cfg.env.name, 1, seed, &cfg.env.params)?;
    let (obs, act) = (probe.observation_space().clone(), probe.action_space().clone());
    let scopes = cfg.scopes()?;
    let resolved = cfg.agent_configs()?;
    let sharing: Vec<usize> = (0..cfg.agents.len()).filter(|&i| cfg.agents[i].share_memory).collect();
    let shared = if sharing.is_empty() {
        None
    } else {
        let rows: usize = sharing.iter().map(|&i| scopes[i].count).sum();
        let capacity = sharing
            .iter()
            .filter_map(|&i| resolved[i].memory_size())
            .max()
            .unwrap_or(rows);
        Some(Memory::new(capacity.div_ceil(rows), rows, agent_seed(seed, usize::MAX / 2))?.shared())
    };
    let agents = resolved
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mem = cfg.agents[i].share_memory.then(|| shared.clone()).flatten();
            build_agent(c, &obs, &act, scopes[i].count, mem, agent_seed(seed, i))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((agents, shared))
}

fn default_outdir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.outdir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name))
}

/// Trains the experiment, writing `metrics.jsonl`, `summary.json` and one
/// checkpoint per agent under the output directory.
pub fn train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput, RunError> {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(t) = opts.timesteps {
        cfg.trainer.total_timesteps = t;
        cfg.trainer.log_interval = cfg.trainer.log_interval.min(t.max(1));
        cfg.trainer.eval_interval = cfg.trainer.eval_interval.min(t.max(1));
    }
    cfg.validate()?;
    let outdir = opts.outdir.clone().unwrap_or_else(|| default_outdir(&cfg));
    fs::create_dir_all(&outdir).map_err(RunError::io(&outdir))?;

    let (mut agents, shared) = build_agents(&cfg, cfg.seed)?;
    let scopes = cfg.scopes()?;
    let mut env = make_env(&cfg.env.name, cfg.env.num_envs, cfg.seed, &cfg.env.params)?;
    let ids: Vec<String> = agents.iter().enumerate().map(|(i, a)| agent_id(i, a.as_ref())).collect();

    let metrics_path = outdir.join("metrics.jsonl");
    let header = LogHeader::new(&cfg, ids.clone());
    let mut sink = JsonlSink::create(&metrics_path, &header, !opts.headless)?;
    let summary = simultaneous_train(&mut agents, &scopes, &mut env, &cfg.trainer, &mut sink)?;
    sink.finish()?;

    let ckpt_dir = outdir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(RunError::io(&ckpt_dir))?;
    let mut checkpoints = Vec::new();
    for (a, id) in agents.iter().zip(&ids) {
        let path = ckpt_dir.join(format!("{id}.sktn"));
        checkpoint::save(&path, &a.named_tensors())?;
        checkpoints.push(path);
    }
    if cfg.export_memory {
        export_memories(&agents, &ids, &outdir)?;
    }
    let summary_path = outdir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, json).map_err(RunError::io(&summary_path))?;
    let shared_memory_stored = shared.map(|m| m.lock().expect("memory lock").stored_count());
    Ok(RunOutput {
        summary,
        outdir,
        metrics_path,
        checkpoints,
        shared_memory_stored,
    })
}

/// Writes each distinct replay memory once as `memory_<agent id>.csv`.
fn export_memories(agents: &[Box<dyn Agent>], ids: &[String], outdir: &Path) -> Result<(), RunError> {
    let mut seen: Vec<SharedMemory> = Vec::new();
    for (a, id) in agents.iter().zip(ids) {
        let Some(mem) = a.memory() else { continue };
        if seen.iter().any(|m| std::sync::Arc::ptr_eq(m, &mem)) {
            continue;
        }
        let m = mem.lock().expect("memory lock");
        if m.stored_count() > 0 {
            m.export(outdir.join(format!("memory_{id}.csv")), ExportFormat::Csv)?;
        }
        drop(m);
        seen.push(mem);
    }
    Ok(())
}

/// Loads every agent checkpoint found in `checkpoint_dir` and reports each
/// agent's mean greedy return over `episodes` episodes on a fresh env.
pub fn eval(
    cfg: &ExperimentConfig,
    checkpoint_dir: &Path,
    episodes: usize,
    seed: u64,
) -> Result<Vec<(String, Vec<f64>)>, RunError> {
    cfg.validate()?;
    let (mut agents, _) = build_agents(cfg, cfg.seed)?;
    let mut out = Vec::new();
    for (i, agent) in agents.iter_mut().enumerate() {
        let id = agent_id(i, agent.as_ref());
        let tensors = checkpoint::load(checkpoint_dir.join(format!("{id}.sktn")))?;
        agent.load_named(&tensors)?;
        let n = agent.num_envs();
        let mut env = make_env(&cfg.env.name, n, seed, &cfg.env.params)?;
        let max_steps = 10_000 * episodes.max(1);
        let returns = evaluate(agent.as_mut(), &mut env, episodes, max_steps)?;
        out.push((id, returns));
    }
    Ok(out)
}
