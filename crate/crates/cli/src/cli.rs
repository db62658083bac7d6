//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::artifacts::write_atomic;
use crate::compare::{cmd_compare, Metric};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::priority::cmd_priority_study;
use crate::render::cmd_render;
use crate::train::{cmd_evaluate, cmd_train};

#[derive(Debug, Parser)]
#[command(name = "crossroads", version, about = "Reinforcement-learning agents for an unsignalised intersection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Episode count override.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Suppress progress output.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the configured agent once per seed.
    Train(Common),
    /// Greedy evaluation of a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file or run directory.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write one SVG per decision of a greedy rollout.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare learning curves of finished runs.
    Compare {
        /// Run directories (each holding a manifest and metrics).
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with and without ego right of way and compare behaviour.
    PriorityStudy(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.env.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        config.output.dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn with_training_episodes(mut config: ExperimentConfig, episodes: Option<usize>) -> Result<ExperimentConfig, CliError> {
    if let Some(n) = episodes {
        config.training.episodes = n;
        config.validate()?;
    }
    Ok(config)
}

fn print_json(value: &impl serde::Serialize, out: Option<&Path>, file: &str) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).map_err(|e| CliError::io(file, e))?;
    println!("{json}");
    if let Some(dir) = out {
        write_atomic(&dir.join(file), json.as_bytes())?;
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(common) => {
            let config = with_training_episodes(load(&common)?, common.episodes)?;
            for dir in cmd_train(&config, &config.output.dir, common.quiet)? {
                println!("{}", dir.display());
            }
        }
        Command::Evaluate { common, checkpoint } => {
            let config = load(&common)?;
            let episodes = common.episodes.unwrap_or(config.evaluation.episodes);
            let seed = common.seed.unwrap_or(config.evaluation.seed);
            let summary = cmd_evaluate(&config, &checkpoint, episodes, seed)?;
            print_json(&summary, common.out.as_deref(), "evaluation.json")?;
        }
        Command::Render { common, checkpoint } => {
            let config = load(&common)?;
            let seed = common.seed.unwrap_or(config.evaluation.seed);
            let out = common.out.clone().unwrap_or_else(|| config.output.dir.join("render"));
            let frames = cmd_render(&config, &checkpoint, seed, &out)?;
            println!("{} frames written to {}", frames.len(), out.display());
        }
        Command::Compare { runs, out } => {
            let report = cmd_compare(&runs, &out)?;
            for a in &report.agents {
                println!(
                    "{:<14} seeds {}  final return {:.3}  length {:.2}  speed {:.2}",
                    a.agent.name(),
                    a.seeds.len(),
                    a.finals[&Metric::Return].mean,
                    a.finals[&Metric::Length].mean,
                    a.finals[&Metric::AvgSpeed].mean
                );
            }
        }
        Command::PriorityStudy(common) => {
            let config = with_training_episodes(load(&common)?, common.episodes)?;
            let report = cmd_priority_study(&config, &config.output.dir, common.quiet)?;
            for arm in [&report.priority, &report.non_priority] {
                println!(
                    "ego_priority={:<5}  crossing speed {:.2}  yield frequency {:.2}  mean speed {:.2}  return {:.2}",
                    arm.ego_priority,
                    arm.crossing_speed.mean,
                    arm.yield_frequency,
                    arm.mean_speed.mean,
                    arm.mean_return.mean
                );
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
