//! Experiment orchestration: configs, run directories, sweeps, and reports.
//!
//! A run directory `runs/{policy}-D{d}-seed{s}/` holds
//!
//! | file               | content                                          |
//! |--------------------|--------------------------------------------------|
//! | `run.json`         | run spec, data seed, final evaluation            |
//! | `metrics.jsonl`    | one [`MetricsRecord`] per meta-iteration         |
//! | `snapshots.jsonl`  | one [`TrajectorySnapshot`] per decoder and meta  |
//! | `trajectories.csv` | the same snapshots as CSV                        |
//! | `checkpoint.bin`   | final parameters                                 |
//! | `timing.jsonl`     | wall-clock milliseconds per meta-iteration       |
//!
//! Everything except `timing.jsonl` is a pure function of config and seed.
//!
//! [`MetricsRecord`]: crate::training::MetricsRecord
//! [`TrajectorySnapshot`]: crate::training::TrajectorySnapshot

mod config;
mod reports;
mod runner;

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use config::{ControlSettings, CsvTask, DataSource, ExperimentConfig, PolicyChoice, CONFIG_SCHEMA_VERSION};
pub use reports::{
    dropout_schedules, export_trajectories, mean_rate_series, moving_average, write_trajectories_csv,
    DropoutSchedule, DEFAULT_WINDOW,
};
pub use runner::{
    load_run, run_dir_name, run_sweep, run_to_dir, CellSummary, LoadedRun, RunFailure, RunManifest, RunSummary,
    SweepSummary,
};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Serializes each item as one JSON line.
pub(crate) fn jsonl<T: serde::Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.push(b'\n');
    }
    Ok(out)
}
