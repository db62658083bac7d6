//! Run directories `<out>/<agent>/<seed>/` holding `checkpoint.json`, `metrics.csv`
//! and `manifest.json`. Every file is written to a temporary sibling and renamed into
//! place, so readers never observe a partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crossroads_core::dqn::{read_metrics_csv, write_metrics_csv, EpisodeMetrics};
use crossroads_core::nn::{Checkpoint, ModelKind};
use serde::{Deserialize, Serialize};

use crate::config::{hex_digest, ExperimentConfig};
use crate::error::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

/// Git-style object hash (`blob <len>\0<content>`, SHA-256) of `content`.
pub fn content_hash(content: &str) -> String {
    let mut bytes = format!("blob {}\0", content.len()).into_bytes();
    bytes.extend_from_slice(content.as_bytes());
    hex_digest(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub agent: ModelKind,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub code_version: String,
    pub code_hash: String,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Self {
        let version = code_version();
        Self {
            agent: config.agent.kind,
            seed,
            config: config.clone(),
            code_hash: content_hash(&version),
            code_version: version,
        }
    }
}

pub fn run_dir(out: &Path, kind: ModelKind, seed: u64) -> PathBuf {
    out.join(kind.name()).join(seed.to_string())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".partial-")
        .tempfile_in(dir)
        .map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Writes the three artifacts; the manifest goes last and marks completion.
pub fn write_run(
    dir: &Path,
    checkpoint: &Checkpoint,
    metrics: &[EpisodeMetrics],
    manifest: &Manifest,
) -> Result<(), CliError> {
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, metrics).map_err(|e| CliError::io(dir.join(METRICS_FILE), e))?;
    let ckpt = checkpoint.to_json().map_err(|e| CliError::Aborted(e.to_string()))?;
    let manifest_json = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    write_atomic(&dir.join(METRICS_FILE), &csv)?;
    write_atomic(&dir.join(CHECKPOINT_FILE), ckpt.as_bytes())?;
    write_atomic(&dir.join(MANIFEST_FILE), manifest_json.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(&path, e))
}

pub fn read_metrics(dir: &Path) -> Result<Vec<EpisodeMetrics>, CliError> {
    let path = dir.join(METRICS_FILE);
    let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
    read_metrics_csv(file).map_err(|e| CliError::io(&path, e))
}

/// Loads a checkpoint from a file or from a run directory.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| CliError::io(&file, e))?;
    Checkpoint::from_json(&text).map_err(|e| CliError::io(&file, e))
}
