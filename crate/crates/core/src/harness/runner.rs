use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PolicyChoice};
use super::reports::write_trajectories_csv;
use super::{jsonl, write_atomic};
use crate::checkpoint;
use crate::error::{PtaError, Result};
use crate::training::{self, FinalEvaluation, MetricsRecord, RunOutput, RunSpec, TrajectorySnapshot};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub policy: String,
    pub spec: RunSpec,
    pub data_seed: u64,
    pub num_tasks: usize,
    pub final_eval: FinalEvaluation,
}

pub fn run_dir_name(policy: &str, decoders: usize, seed: u64) -> String {
    format!("{policy}-D{decoders}-seed{seed}")
}

#[derive(Serialize)]
struct Timing {
    meta_iteration: usize,
    wall_clock_ms: f64,
}

/// Executes one run into `dir`. Metrics are streamed line by line to
/// `metrics.jsonl.partial` and renamed into place when the run completes,
/// so an aborted run still leaves its finished meta-iterations on disk.
pub fn run_to_dir(config: &ExperimentConfig, policy: &PolicyChoice, decoders: usize, seed: u64, dir: &Path) -> Result<RunOutput> {
    let spec = config.run_spec(policy, decoders, seed)?;
    let data_seed = config.data_seed_for(seed);
    let datasets = config.datasets(seed)?;
    std::fs::create_dir_all(dir)?;

    let partial = dir.join("metrics.jsonl.partial");
    let mut stream = BufWriter::new(File::create(&partial)?);
    let mut timing = Vec::new();
    let mut sink = |r: &MetricsRecord| -> Result<()> {
        serde_json::to_writer(&mut stream, r)?;
        stream.write_all(b"\n")?;
        stream.flush()?;
        timing.push(Timing {
            meta_iteration: r.meta_iteration,
            wall_clock_ms: r.wall_clock_ms,
        });
        Ok(())
    };
    let out = training::run(&spec, &datasets, &mut sink)?;
    stream.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    std::fs::rename(&partial, dir.join("metrics.jsonl"))?;

    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        policy: spec.policy.name(),
        spec,
        data_seed,
        num_tasks: datasets.len(),
        final_eval: out.final_eval.clone(),
    };
    write_atomic(&dir.join("run.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    if manifest.spec.snapshots {
        write_atomic(&dir.join("snapshots.jsonl"), &jsonl(&out.snapshots)?)?;
        let mut csv = Vec::new();
        write_trajectories_csv(&out.snapshots, &mut csv)?;
        write_atomic(&dir.join("trajectories.csv"), &csv)?;
    }
    checkpoint::save(&out.joint, &dir.join("checkpoint.bin"))?;
    write_atomic(&dir.join("timing.jsonl"), &jsonl(&timing)?)?;
    Ok(out)
}

/// A run directory read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub metrics: Vec<MetricsRecord>,
}

impl LoadedRun {
    pub fn snapshots(&self) -> Result<Vec<TrajectorySnapshot>> {
        let path = self.dir.join("snapshots.jsonl");
        if !self.manifest.spec.snapshots || !path.exists() {
            return Err(PtaError::Contract(format!(
                "run {} was recorded without trajectory snapshots",
                self.dir.display()
            )));
        }
        read_jsonl(&path)
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let manifest: RunManifest = serde_json::from_slice(&std::fs::read(dir.join("run.json"))?)?;
    let metrics = read_jsonl(&dir.join("metrics.jsonl"))?;
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        manifest,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub decoders: usize,
    pub seed: u64,
    pub dir: String,
    pub val_error: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub policy: String,
    pub decoders: usize,
    pub seed: u64,
    pub error: String,
}

/// One `(policy, D)` cell aggregated over seeds. Errors are fractions;
/// `improvement_pct` is the baseline's mean test error minus this cell's, in
/// percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub policy: String,
    pub decoders: usize,
    pub runs: usize,
    pub failed: usize,
    pub val_error_mean: f64,
    pub val_error_std: f64,
    pub test_error_mean: f64,
    pub test_error_std: f64,
    pub test_error_median: f64,
    pub improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub baseline: Option<String>,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunSummary>,
    pub failures: Vec<RunFailure>,
}

impl SweepSummary {
    pub fn cell(&self, policy: &str, decoders: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.policy == policy && c.decoders == decoders)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1); zero for a single value.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return if xs.is_empty() { f64::NAN } else { 0.0 };
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

struct Job {
    policy: PolicyChoice,
    name: String,
    decoders: usize,
    seed: u64,
}

/// Runs `policies x decoders x seeds` on up to `jobs` worker threads and
/// writes `summary.json` under `out`. Failed runs are recorded in the
/// summary; the sweep itself only fails on configuration or I/O errors.
pub fn run_sweep(config: &ExperimentConfig, out: &Path, jobs: usize) -> Result<SweepSummary> {
    config.validate()?;
    let mut work = Vec::new();
    for p in &config.policies {
        let name = config.policy(p)?.name();
        for &d in &config.decoders {
            for &s in &config.seeds {
                work.push(Job {
                    policy: p.clone(),
                    name: name.clone(),
                    decoders: d,
                    seed: s,
                });
            }
        }
    }
    let runs_dir = out.join("runs");
    std::fs::create_dir_all(&runs_dir)?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<std::result::Result<RunSummary, RunFailure>>>> =
        Mutex::new(work.iter().map(|_| None).collect());
    let workers = jobs.max(1).min(work.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = work.get(i) else { break };
                let dir_name = run_dir_name(&job.name, job.decoders, job.seed);
                let res = run_to_dir(config, &job.policy, job.decoders, job.seed, &runs_dir.join(&dir_name))
                    .map(|o| RunSummary {
                        policy: job.name.clone(),
                        decoders: job.decoders,
                        seed: job.seed,
                        dir: format!("runs/{dir_name}"),
                        val_error: o.final_eval.validation.aggregate_error,
                        test_error: o.final_eval.test_error,
                    })
                    .map_err(|e| RunFailure {
                        policy: job.name.clone(),
                        decoders: job.decoders,
                        seed: job.seed,
                        error: e.to_string(),
                    });
                results.lock().unwrap()[i] = Some(res);
            });
        }
    });

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for r in results.into_inner().unwrap().into_iter().flatten() {
        match r {
            Ok(s) => runs.push(s),
            Err(f) => failures.push(f),
        }
    }

    let has_baseline = work.iter().any(|j| j.name == "PTA-I" && j.decoders == 1);
    let mut cells = Vec::new();
    for p in &config.policies {
        let name = config.policy(p)?.name();
        for &d in &config.decoders {
            if cells.iter().any(|c: &CellSummary| c.policy == name && c.decoders == d) {
                continue;
            }
            let of = |f: fn(&RunSummary) -> f64| -> Vec<f64> {
                runs.iter().filter(|r| r.policy == name && r.decoders == d).map(f).collect()
            };
            let val = of(|r| r.val_error);
            let test = of(|r| r.test_error);
            cells.push(CellSummary {
                policy: name.clone(),
                decoders: d,
                runs: test.len(),
                failed: failures.iter().filter(|f| f.policy == name && f.decoders == d).count(),
                val_error_mean: mean(&val),
                val_error_std: std_dev(&val),
                test_error_mean: mean(&test),
                test_error_std: std_dev(&test),
                test_error_median: median(&test),
                improvement_pct: None,
            });
        }
    }
    let baseline = if has_baseline {
        let base = cells
            .iter()
            .find(|c| c.policy == "PTA-I" && c.decoders == 1)
            .map(|c| c.test_error_mean);
        for c in &mut cells {
            c.improvement_pct = base.map(|b| 100.0 * (b - c.test_error_mean)).filter(|v| v.is_finite());
        }
        Some("PTA-I/D1".to_string())
    } else {
        None
    };

    let summary = SweepSummary {
        schema_version: MANIFEST_SCHEMA_VERSION,
        baseline,
        cells,
        runs,
        failures,
    };
    write_atomic(&out.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}
