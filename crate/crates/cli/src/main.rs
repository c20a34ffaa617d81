//! Batch CLI wiring the environments, self-play pipeline, world model and
//! evaluation into reproducible runs.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{
    load_config, AccuracyConfig, EvalConfig, FitConfig, GenDataConfig, PlanEvalConfig, PplConfig,
};

#[derive(Parser)]
#[command(
    name = "selfplay",
    about = "Grid-world self-play data engine: dataset generation, world-model fitting and pass@k evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path overrides, e.g. --set policy.seed=7; flags win over file values.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for --set seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; outputs are byte-identical for any value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Collect self-play trajectories and emit a masked SFT dataset.
    GenData {
        #[command(flatten)]
        run: RunArgs,
        /// Skip writing trajectories.jsonl alongside the dataset.
        #[arg(long)]
        no_trajectories: bool,
    },
    /// Run a pass@1/pass@k evaluation suite.
    Eval {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Tabular transition-model operations.
    Worldmodel {
        #[command(subcommand)]
        command: WorldmodelCommand,
    },
    /// Perplexity of state texts under a log-prob provider.
    Ppl {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Render a stored trajectory turn by turn.
    PlayTrace {
        /// trajectories.jsonl produced by gen-data.
        #[arg(long)]
        input: PathBuf,
        /// Zero-based trajectory index.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

#[derive(Subcommand)]
enum WorldmodelCommand {
    /// Fit a transition table from policy rollouts and export it.
    Fit {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a fitted table against held-out rollouts.
    Accuracy {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Planner-vs-random pass@k lift suite on full-coverage tables.
    PlanEval {
        #[command(flatten)]
        run: RunArgs,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData {
            run,
            no_trajectories,
        } => {
            let (params, resolved) =
                load_config::<GenDataConfig>(&run.config, &run.sets, run.seed)?;
            commands::gen_data(&params, &resolved, run.jobs, &run.out, !no_trajectories)
        }
        Command::Eval { run } => {
            let (config, resolved) = load_config::<EvalConfig>(&run.config, &run.sets, run.seed)?;
            commands::eval(&config, &resolved, run.jobs, &run.out)
        }
        Command::Worldmodel { command } => match command {
            WorldmodelCommand::Fit { run } => {
                let (config, resolved) =
                    load_config::<FitConfig>(&run.config, &run.sets, run.seed)?;
                commands::worldmodel_fit(&config, &resolved, &run.out)
            }
            WorldmodelCommand::Accuracy { run } => {
                let (config, resolved) =
                    load_config::<AccuracyConfig>(&run.config, &run.sets, run.seed)?;
                commands::worldmodel_accuracy(&config, &resolved, &run.out)
            }
            WorldmodelCommand::PlanEval { run } => {
                let (config, resolved) =
                    load_config::<PlanEvalConfig>(&run.config, &run.sets, run.seed)?;
                commands::worldmodel_plan_eval(&config, &resolved, run.jobs, &run.out)
            }
        },
        Command::Ppl { run } => {
            let (config, resolved) = load_config::<PplConfig>(&run.config, &run.sets, run.seed)?;
            commands::ppl(&config, &resolved, &run.out)
        }
        Command::PlayTrace { input, index } => commands::play_trace(&input, index),
    }
}
