use std::path::{Path, PathBuf};
use std::thread;

use crossroads_core::dqn::{evaluate, run_training, EvalSummary, TrainingRun};
use crossroads_core::nn::Checkpoint;

use crate::artifacts::{read_checkpoint, read_manifest, run_dir, write_run, Manifest};
use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Trains one agent with one seed and writes its artifacts under `out`.
pub fn train_seed(config: &ExperimentConfig, seed: u64, out: &Path, quiet: bool) -> Result<(PathBuf, TrainingRun), CliError> {
    let kind = config.agent.kind;
    let run = run_training(
        &config.env_config(),
        kind,
        &config.agent.arch,
        &config.train_config(seed),
        |m| {
            if !quiet && (m.episode + 1) % 100 == 0 {
                eprintln!(
                    "[{kind} seed {seed}] episode {} return {:.1} epsilon {:.3}",
                    m.episode + 1,
                    m.episode_return,
                    m.epsilon
                );
            }
        },
    )?;
    let dir = run_dir(out, kind, seed);
    let checkpoint = Checkpoint::new(run.model.clone(), config.content_hash());
    write_run(&dir, &checkpoint, &run.metrics, &Manifest::new(config, seed))?;
    Ok((dir, run))
}

/// Trains every configured seed, one worker thread per seed.
pub fn cmd_train(config: &ExperimentConfig, out: &Path, quiet: bool) -> Result<Vec<PathBuf>, CliError> {
    let results: Vec<Result<PathBuf, CliError>> = thread::scope(|s| {
        let handles: Vec<_> = config
            .env
            .seeds
            .iter()
            .map(|&seed| s.spawn(move || train_seed(config, seed, out, quiet).map(|(dir, _)| dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Aborted("training worker panicked".into()))))
            .collect()
    });
    results.into_iter().collect()
}

/// The artifacts for `(config, seed)` under `out` when a previous run with the same
/// configuration completed, else a fresh training run.
pub fn train_or_reuse(config: &ExperimentConfig, seed: u64, out: &Path, quiet: bool) -> Result<Checkpoint, CliError> {
    let dir = run_dir(out, config.agent.kind, seed);
    if let Ok(manifest) = read_manifest(&dir) {
        if manifest.config == *config && manifest.seed == seed {
            return read_checkpoint(&dir);
        }
    }
    let (_, run) = train_seed(config, seed, out, quiet)?;
    Ok(Checkpoint::new(run.model, config.content_hash()))
}

/// Greedy evaluation of a stored checkpoint on the configured environment.
pub fn cmd_evaluate(config: &ExperimentConfig, checkpoint: &Path, episodes: usize, seed: u64) -> Result<EvalSummary, CliError> {
    let ckpt = read_checkpoint(checkpoint)?;
    if episodes == 0 {
        return Err(CliError::Usage("--episodes must be positive".into()));
    }
    Ok(evaluate(&ckpt.model, &config.env_config(), episodes, seed)?)
}
