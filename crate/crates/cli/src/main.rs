use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tlopt_cli::pipeline::{CHECKPOINT_FILE, DATASET_FILE};
use tlopt_cli::{cmd_collect, cmd_optimize, cmd_report, cmd_train, gen_patterns, CliError, ExperimentConfig};

/// Offline meta black-box optimization of traffic-light timings.
#[derive(Parser)]
#[command(name = "tlopt", version)]
struct Cli {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    overwrite: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample training and held-out traffic patterns.
    GenPatterns,
    /// Evaluate random designs on the training patterns.
    Collect {
        /// Directory written by gen-patterns.
        #[arg(long)]
        patterns: PathBuf,
    },
    /// Meta-train the surrogate on a collected dataset.
    Train {
        /// dataset.jsonl, or the directory written by collect.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run ANP-BO, random search and GP-UCB on the held-out patterns.
    Optimize {
        /// checkpoint.json, or the directory written by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory written by gen-patterns.
        #[arg(long)]
        patterns: PathBuf,
    },
    /// Recompute report.csv, summary.csv and plots from the traces in --out.
    Report,
}

fn file_or_dir(path: PathBuf, default_name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_name)
    } else {
        path
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let out = cli.out.ok_or_else(|| CliError::Config("--out is required".into()))?;
    let out = out.as_path();
    match cli.command {
        Command::GenPatterns => gen_patterns(&cfg, out, cli.overwrite).map(drop),
        Command::Collect { patterns } => cmd_collect(&cfg, &patterns, out, cli.overwrite).map(drop),
        Command::Train { dataset } => {
            cmd_train(&cfg, &file_or_dir(dataset, DATASET_FILE), out, cli.overwrite).map(drop)
        }
        Command::Optimize { checkpoint, patterns } => {
            let ckpt = file_or_dir(checkpoint, CHECKPOINT_FILE);
            cmd_optimize(&cfg, &ckpt, &patterns, out, cli.overwrite).map(drop)
        }
        Command::Report => cmd_report(Path::new(out)).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("tlopt: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
