use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vecrl::runner::{self, RunError, RunOptions};

#[derive(Parser)]
#[command(name = "vecrl", version, about = "Train and evaluate vectorized RL agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the agents of an experiment config.
    Train {
        /// Config file, or the name of a bundled config.
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        outdir: Option<PathBuf>,
        /// Overrides trainer.total_timesteps.
        #[arg(long)]
        timesteps: Option<usize>,
        /// No progress output.
        #[arg(long)]
        headless: bool,
    },
    /// Report the mean greedy return of trained checkpoints.
    Eval {
        #[arg(long)]
        config: String,
        /// Directory holding `<agent id>.sktn` files.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize a metric log into a per-agent CSV.
    Report {
        /// A metrics.jsonl file written by `train`.
        metrics: PathBuf,
        /// Output CSV; defaults to report.csv beside the log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Column statistics of an exported memory file, as CSV.
    ExportMemoryStats {
        memory: PathBuf,
        /// Output CSV; defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled experiment configs.
    Configs,
}

fn load(config: &str) -> Result<runner::ExperimentConfig, RunError> {
    Ok(runner::load_config(config)?)
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Train {
            config,
            seed,
            outdir,
            timesteps,
            headless,
        } => {
            let cfg = load(&config)?;
            let opts = RunOptions {
                seed,
                outdir,
                timesteps,
                headless,
            };
            let out = runner::train(&cfg, &opts)?;
            for a in &out.summary.agents {
                let mean = a.mean_return.map_or("-".to_string(), |m| format!("{m:.2}"));
                println!("{}\tepisodes {}\tmean_return {mean}", a.agent_id, a.episodes);
            }
            println!("metrics\t{}", out.metrics_path.display());
        }
        Command::Eval {
            config,
            checkpoints,
            episodes,
            seed,
        } => {
            let cfg = load(&config)?;
            for (id, returns) in runner::eval(&cfg, &checkpoints, episodes, seed)? {
                let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
                println!("{id}\tepisodes {}\tmean_return {mean:.2}", returns.len());
            }
        }
        Command::Report { metrics, out } => {
            let (header, records) = runner::read_metrics(&metrics)?;
            let rows = runner::report(&header, &records);
            let out = out.unwrap_or_else(|| metrics.with_file_name("report.csv"));
            runner::write_report_csv(&out, &rows)?;
            for r in &rows {
                let mean = r.mean_return.map_or("-".to_string(), |m| format!("{m:.2}"));
                println!("{}\tepisodes {}\tmean_return {mean}", r.agent_id, r.episodes);
            }
            println!("report\t{}", out.display());
        }
        Command::ExportMemoryStats { memory, out } => {
            let stats = runner::memory_stats(&memory)?;
            match out {
                Some(path) => runner::write_memory_stats_csv(path, &stats)?,
                None => {
                    println!("tensor,dim,mean,std,min,max");
                    for s in &stats {
                        println!("{},{},{},{},{},{}", s.tensor, s.dim, s.mean, s.std, s.min, s.max);
                    }
                }
            }
        }
        Command::Configs => {
            for (name, _) in runner::BUNDLED {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
