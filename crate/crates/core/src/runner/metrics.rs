use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, RunError};
use crate::trainer::{MetricRecord, MetricSink};

/// First line of every metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    /// SHA-256 of the canonical config text.
    pub config_digest: String,
    pub seed: u64,
    pub version: String,
    pub env: String,
    pub num_envs: usize,
    pub total_timesteps: usize,
    pub agents: Vec<String>,
}

impl LogHeader {
    pub fn new(cfg: &ExperimentConfig, agents: Vec<String>) -> Self {
        let digest = Sha256::digest(cfg.to_toml_string().as_bytes());
        Self {
            config_digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            env: cfg.env.name.clone(),
            num_envs: cfg.env.num_envs,
            total_timesteps: cfg.trainer.total_timesteps,
            agents,
        }
    }
}

/// Appends records to a JSON-lines file; the header is written on creation.
pub struct JsonlSink {
    out: BufWriter<File>,
    path: PathBuf,
    progress: bool,
}

impl JsonlSink {
    pub fn create(path: &Path, header: &LogHeader, progress: bool) -> Result<Self, RunError> {
        let file = File::create(path).map_err(RunError::io(path))?;
        let mut sink = Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
            progress,
        };
        let line = serde_json::to_string(header).expect("header serializes");
        writeln!(sink.out, "{line}").map_err(RunError::io(path))?;
        Ok(sink)
    }

    pub fn finish(mut self) -> Result<(), RunError> {
        self.out.flush().map_err(RunError::io(&self.path))
    }
}

impl MetricSink for JsonlSink {
    fn record(&mut self, record: &MetricRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        if self.progress && record.metric == "mean_return" {
            eprintln!("[{:>9}] {:<12} mean_return {:>10.2}", record.timestep, record.agent_id, record.value);
        }
        Ok(())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

/// Reads a metric log written by [`JsonlSink`].
pub fn read_metrics(path: impl AsRef<Path>) -> Result<(LogHeader, Vec<MetricRecord>), RunError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(RunError::io(path))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |n: usize, e: &dyn std::fmt::Display| RunError::Log(format!("{}:{n}: {e}", path.display()));
    let first = lines
        .next()
        .ok_or_else(|| bad(1, &"missing header line"))?
        .map_err(RunError::io(path))?;
    let header: LogHeader = serde_json::from_str(&first).map_err(|e| bad(1, &e))?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(RunError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| bad(i + 2, &e))?);
    }
    Ok((header, records))
}

/// Episode statistics of one agent in a metric log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub agent_id: String,
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub std_return: Option<f64>,
    pub min_return: Option<f64>,
    pub max_return: Option<f64>,
    pub last_100_mean: Option<f64>,
    pub last_timestep: usize,
}

/// One row per agent named in the header, then any other agent seen.
pub fn report(header: &LogHeader, records: &[MetricRecord]) -> Vec<ReportRow> {
    let mut ids = header.agents.clone();
    for r in records {
        if !ids.contains(&r.agent_id) {
            ids.push(r.agent_id.clone());
        }
    }
    ids.into_iter()
        .map(|id| {
            let mine = records.iter().filter(|r| r.agent_id == id);
            let last_timestep = mine.clone().map(|r| r.timestep).max().unwrap_or(0);
            let returns: Vec<f64> = mine.filter(|r| r.metric == "episode_return").map(|r| r.value).collect();
            let n = returns.len();
            let mean = (n > 0).then(|| returns.iter().sum::<f64>() / n as f64);
            let std = mean.map(|m| (returns.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt());
            let tail = &returns[n.saturating_sub(100)..];
            ReportRow {
                agent_id: id,
                episodes: n,
                mean_return: mean,
                std_return: std,
                min_return: returns.iter().copied().reduce(f64::min),
                max_return: returns.iter().copied().reduce(f64::max),
                last_100_mean: (n > 0).then(|| tail.iter().sum::<f64>() / tail.len() as f64),
                last_timestep,
            }
        })
        .collect()
}

pub fn write_report_csv(path: impl AsRef<Path>, rows: &[ReportRow]) -> Result<(), RunError> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| RunError::Log(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for row in rows {
        w.serialize(row).map_err(to_err)?;
    }
    w.flush().map_err(RunError::io(path))
}
