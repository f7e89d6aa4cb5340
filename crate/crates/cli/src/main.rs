use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use cascade_rank::kg::Split;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod layout;

use commands::Session;
use config::ExperimentConfig;

/// Tiered cascaded ranking for knowledge-graph link prediction.
#[derive(Debug, Parser)]
#[command(name = "cascade-rank", version)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config, defaults to ./out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for scoring and pruning.
    #[arg(long, global = true, env = "CASCADE_RANK_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate a dataset, then print its summary.
    Prepare {
        /// Dataset directory; the config's graph when omitted.
        dir: Option<PathBuf>,
    },
    /// Train the configured KGE scorers.
    TrainKge {
        #[arg(long)]
        scorer: Option<String>,
    },
    /// Write raw score matrices for dev and the evaluation split.
    Score {
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Tune a two-scorer blend on dev and evaluate it.
    Ensemble {
        a: String,
        b: String,
        /// Alpha grid, comma separated.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Fit the configured cascade on dev and evaluate it.
    Cascade,
    /// Filtered metrics of a score matrix file.
    Evaluate {
        matrix: PathBuf,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Correlation, margin and distribution diagnostics.
    Analyze {
        scorers: Vec<String>,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Sweep the last boundary's pruning and report the cost/MRR frontier.
    Pareto,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Prepare { dir } => {
            // without a config there is nothing to record beyond the summary
            if cli.config.is_none() && cli.out.is_none() {
                return commands::prepare(dir.as_deref(), None);
            }
            let mut s = Session::open(cfg)?;
            commands::prepare(dir.as_deref(), Some(&mut s))
        }
        Command::TrainKge { scorer } => commands::train(&mut Session::open(cfg)?, scorer.as_deref()),
        Command::Score { scorer, split } => commands::score(&mut Session::open(cfg)?, scorer.as_deref(), *split),
        Command::Ensemble { a, b, grid } => commands::ensemble(&mut Session::open(cfg)?, a, b, grid.clone()),
        Command::Cascade => commands::cascade(&mut Session::open(cfg)?),
        Command::Evaluate { matrix, split } => commands::evaluate_file(&mut Session::open(cfg)?, matrix, *split),
        Command::Analyze { scorers, split } => commands::analyze(&mut Session::open(cfg)?, scorers, *split),
        Command::Pareto => commands::pareto(&mut Session::open(cfg)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
