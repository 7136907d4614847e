//! `freqact`: demonstrations, spectral analysis, training, evaluation,
//! sampling and inference benchmarks from one binary.

mod commands;
mod context;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "freqact", version, about = "Frequency-domain action chunking policies on toy control tasks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default `runs/<subcommand>`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `key=value` override, applied after the config file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate scripted-expert demonstrations into the output directory.
    Demos,
    /// Band energy, energy-proportion curve, band-limited reconstructions and the compression replay curve.
    Analyze {
        /// Dataset directory (default `data.path`).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train a policy, writing checkpoints and the loss curve.
    Train {
        /// Dataset directory (default `data.path`; demos are generated in memory when both are empty).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from a checkpoint; its embedded config is used.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many optimizer steps in total, even if the schedule is longer.
        #[arg(long)]
        until: Option<u64>,
    },
    /// Closed-loop evaluation over `eval.seeds` x `eval.episodes` episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        n_iter: Option<usize>,
    },
    /// Generate one chunk from an observation file and dump every iteration.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV with `policy.observation_step` rows of raw observations.
        #[arg(long)]
        obs: PathBuf,
    },
    /// Sweep the iteration count and emit the cost/success Pareto table.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Demos => "demos",
            Command::Analyze { .. } => "analyze",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Sample { .. } => "sample",
            Command::Bench { .. } => "bench",
        }
    }
}

fn run(cli: Cli) -> freqact::Result<()> {
    context::init_threads()?;
    let name = cli.command.name();
    let common = &cli.common;
    match cli.command {
        Command::Demos => commands::demos(&context::Context::new(common, name, None)?),
        Command::Analyze { data } => commands::analyze(&context::Context::new(common, name, None)?, data),
        Command::Train { data, resume, until } => commands::train(common, name, data, resume, until),
        Command::Eval {
            checkpoint,
            episodes,
            n_iter,
        } => commands::eval(common, name, &checkpoint, episodes, n_iter),
        Command::Sample { checkpoint, obs } => commands::sample(common, name, &checkpoint, &obs),
        Command::Bench { checkpoint } => commands::bench(common, name, &checkpoint),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
