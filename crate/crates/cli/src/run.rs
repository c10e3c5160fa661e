//! Run directories. A run writes, in order:
//!
//! - `manifest.json`: config snapshot, seed, code version, start time and
//!   artifact paths, written before the first iteration and never touched again;
//! - `log.csv`: one row per iteration, flushed as it is produced;
//! - `timings.csv`: wall-clock seconds per iteration (kept out of the log so
//!   that the log is a pure function of the manifest);
//! - `checkpoints/`: periodic and final trainer checkpoints;
//! - `status.json`: end time and outcome, written once the run stops.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use safe_marl::trainers::{Checkpoint, LogWriter, Trainer, TrainingConfig};

use crate::CODE_VERSION;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "log.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const STATUS_FILE: &str = "status.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.json";
pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub log: String,
    pub timings: String,
    pub checkpoints: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub code_version: String,
    pub seed: u64,
    pub config: TrainingConfig,
    /// Resolved cost bounds `[i][j]`; `null` means unconstrained.
    pub bounds: Vec<Vec<Option<f64>>>,
    pub started: String,
    /// Relative to the run directory.
    pub paths: ArtifactPaths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub outcome: Outcome,
    pub iterations_completed: usize,
    pub finished: String,
    pub seconds: f64,
    pub error: Option<String>,
}

fn now() -> String {
    OffsetDateTime::now_utc().format(&Rfc3339).unwrap_or_else(|_| "unknown".into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if manifest.format != MANIFEST_FORMAT {
        bail!("unsupported manifest format {}", manifest.format);
    }
    Ok(manifest)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Trains `config` into `dir`, which must not already hold a run.
///
/// Returns the status also written to `status.json`; an aborted run is an
/// error carrying the trainer's message.
pub fn train(config: TrainingConfig, dir: &Path) -> Result<RunStatus> {
    let mut trainer = Trainer::new(config)?;
    if dir.join(MANIFEST_FILE).exists() {
        bail!("{} already contains a run", dir.display());
    }
    fs::create_dir_all(dir.join(CHECKPOINT_DIR)).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = RunManifest {
        format: MANIFEST_FORMAT,
        code_version: CODE_VERSION.into(),
        seed: trainer.config().seed,
        config: trainer.config().clone(),
        bounds: trainer
            .bounds()
            .iter()
            .map(|row| row.iter().map(|c| c.is_finite().then_some(*c)).collect())
            .collect(),
        started: now(),
        paths: ArtifactPaths {
            log: LOG_FILE.into(),
            timings: TIMINGS_FILE.into(),
            checkpoints: CHECKPOINT_DIR.into(),
            status: STATUS_FILE.into(),
        },
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;

    let mut log = LogWriter::new(BufWriter::new(File::create(dir.join(LOG_FILE))?), trainer.n_costs())?;
    let mut timings = BufWriter::new(File::create(dir.join(TIMINGS_FILE))?);
    writeln!(timings, "iteration,seconds")?;
    timings.flush()?;
    let interval = trainer.config().checkpoint_interval;
    let start = Instant::now();
    let mut last = Instant::now();
    let result = trainer.run(|t, row| {
        log.write(row)?;
        writeln!(timings, "{},{}", row.iteration, last.elapsed().as_secs_f64())?;
        timings.flush()?;
        last = Instant::now();
        if interval > 0 && row.iteration % interval == 0 {
            let path = dir.join(CHECKPOINT_DIR).join(format!("iter_{:06}.json", row.iteration));
            let text = serde_json::to_string(&t.checkpoint()).map_err(safe_marl::Error::from)?;
            fs::write(path, text)?;
        }
        Ok(())
    });
    let final_path = dir.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT);
    write_json(&final_path, &trainer.checkpoint())?;
    let status = RunStatus {
        outcome: if result.is_ok() { Outcome::Completed } else { Outcome::Aborted },
        iterations_completed: trainer.state().iteration,
        finished: now(),
        seconds: start.elapsed().as_secs_f64(),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    write_json(&dir.join(STATUS_FILE), &status)?;
    match result {
        Ok(_) => Ok(status),
        Err(e) => Err(anyhow::Error::new(e).context(format!("run aborted after {} iterations", status.iterations_completed))),
    }
}

/// Default run directory `<root>/<algorithm>_<env>_seed<seed>`.
pub fn default_run_dir(root: &Path, config: &TrainingConfig) -> PathBuf {
    root.join(format!("{}_{}_seed{}", config.algorithm, crate::config::env_id(config), config.seed))
}
