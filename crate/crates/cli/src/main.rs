mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lossearch_core::augment::Technique;
use lossearch_core::par::{with_jobs, Execution};

use crate::commands::Context;
use crate::config::{ConfigError, ExperimentConfig};

/// Loss-function search experiments over expression-graph genomes.
#[derive(Parser, Debug)]
#[command(name = "lossearch", version)]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set trainer.settings.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Concurrent evaluations. Results do not depend on this.
    #[arg(long, short, default_value_t = 1, global = true)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a random genome pool under every augmentation technique.
    RankRandom,
    /// Regularized evolution with checkpoints.
    Search {
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop once this many iterations have completed.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Staged elimination of candidate genomes.
    Eliminate {
        /// Genome list (JSON); defaults to the search's population.json.
        #[arg(long)]
        candidates: Option<PathBuf>,
    },
    /// Rank correlations, best-k intersections and clustering of fitness ledgers.
    Analyze {
        /// Fitness ledgers; defaults to the configured ones or rank_ledger.csv.
        ledgers: Vec<PathBuf>,
    },
    /// Loss surfaces and binary phenotypes as CSV grids.
    Phenotype {
        /// Built-in loss names or genome files.
        #[arg(required = true)]
        losses: Vec<String>,
        /// Also write the normalized difference of the two losses.
        #[arg(long)]
        diff: bool,
    },
    /// Built-in losses.
    Losses {
        #[command(subcommand)]
        action: LossesAction,
    },
    /// Train once with a given loss.
    Train {
        /// Built-in loss name or genome file.
        loss: String,
        #[arg(long)]
        technique: Option<Technique>,
    },
}

#[derive(Subcommand, Debug)]
enum LossesAction {
    /// List built-in losses as CSV.
    List,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Losses { action: LossesAction::List } = cli.command {
        return commands::losses_list();
    }
    if cli.jobs == 0 {
        return Err(ConfigError("--jobs must be at least 1".into()).into());
    }
    let mut overrides = cli.overrides.clone();
    if let Some(dir) = &cli.output_dir {
        overrides.push(format!("output_dir={}", toml::Value::String(dir.display().to_string())));
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    let ctx = Context { cfg, exec: Execution::for_jobs(cli.jobs) };
    with_jobs(cli.jobs, || match &cli.command {
        Command::RankRandom => commands::rank_random(&ctx),
        Command::Search { resume, stop_after } => commands::search(&ctx, *resume, *stop_after),
        Command::Eliminate { candidates } => commands::eliminate_cmd(&ctx, candidates.as_deref()),
        Command::Analyze { ledgers } => commands::analyze(&ctx, ledgers),
        Command::Phenotype { losses, diff } => commands::phenotype(&ctx, losses, *diff),
        Command::Train { loss, technique } => commands::train_cmd(&ctx, loss, *technique),
        Command::Losses { .. } => unreachable!("handled above"),
    })
}

fn is_config_error(e: &anyhow::Error) -> bool {
    use lossearch_core::Error as E;
    e.chain().any(|c| {
        c.is::<ConfigError>()
            || matches!(
                c.downcast_ref::<E>(),
                Some(E::Config(_) | E::Parse { .. } | E::InvalidGenome(_) | E::UnknownOp(_))
            )
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let config = is_config_error(&e);
            eprintln!("{}: {e:#}", if config { "config error" } else { "error" });
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
