use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use pta_core::harness::{self, ExperimentConfig, PolicyChoice};
use pta_core::{gradcheck, theory};

#[derive(Parser)]
#[command(name = "pta", version, about = "Pseudo-task augmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single run (first policy and D of the config unless overridden).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run seed; defaults to the config's first seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Policy name such as PTA-HGD.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        decoders: Option<usize>,
    },
    /// Run policies x decoder counts x seeds and write summary.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Exact witness, duplication, and ensemble checks; JSON on stdout.
    VerifyTheory {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Also write the report to DIR/theory.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks on randomized models; JSON on stdout.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        count: usize,
    },
    /// Trajectory CSV of a finished run directory.
    ExportTrajectories {
        #[arg(long)]
        run: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-task mean dropout schedule of a hyperperturbed run; JSON on stdout.
    ReportDropout {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = harness::DEFAULT_WINDOW)]
        window: usize,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            policy,
            decoders,
        } => {
            let cfg = load_config(&config)?;
            let policy = policy.map(PolicyChoice::Name).unwrap_or_else(|| cfg.policies[0].clone());
            let decoders = decoders.unwrap_or(cfg.decoders[0]);
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let name = cfg.policy(&policy)?.name();
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let dir = out.join("runs").join(harness::run_dir_name(&name, decoders, seed));
            let result = harness::run_to_dir(&cfg, &policy, decoders, seed, &dir)
                .with_context(|| format!("run {}", dir.display()))?;
            eprintln!("wrote {}", dir.display());
            print_json(&result.final_eval)?;
            Ok(true)
        }
        Command::Sweep { config, out, jobs, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let summary = harness::run_sweep(&cfg, &out, jobs)?;
            for f in &summary.failures {
                eprintln!("run {} D={} seed={} failed: {}", f.policy, f.decoders, f.seed, f.error);
            }
            eprintln!("wrote {}", out.join("summary.json").display());
            print_json(&summary.cells)?;
            Ok(summary.failures.is_empty())
        }
        Command::VerifyTheory { seed, instances, out } => {
            let report = theory::full_report(seed, instances)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                harness::write_atomic(&dir.join("theory.json"), &serde_json::to_vec_pretty(&report)?)?;
            }
            print_json(&report)?;
            Ok(report.passed)
        }
        Command::Gradcheck { seed, count } => {
            let results = gradcheck::run_suite(seed, count)?;
            let passed = results.iter().all(|r| r.passed);
            print_json(&serde_json::json!({
                "step": gradcheck::STEP,
                "relative_tolerance": gradcheck::RELATIVE_TOLERANCE,
                "cases": results.len(),
                "failed": results.iter().filter(|r| !r.passed).count(),
                "max_error": results.iter().map(|r| r.max_error).fold(0.0, f64::max),
                "passed": passed,
                "results": results,
            }))?;
            Ok(passed)
        }
        Command::ExportTrajectories { run, out } => {
            let loaded = harness::load_run(&run).with_context(|| format!("reading run {}", run.display()))?;
            match out {
                Some(path) => {
                    let mut buf = Vec::new();
                    let rows = harness::export_trajectories(&loaded, &mut buf)?;
                    harness::write_atomic(&path, &buf)?;
                    eprintln!("wrote {rows} rows to {}", path.display());
                }
                None => {
                    harness::export_trajectories(&loaded, &mut std::io::stdout().lock())?;
                }
            }
            Ok(true)
        }
        Command::ReportDropout { run, window } => {
            let loaded = harness::load_run(&run).with_context(|| format!("reading run {}", run.display()))?;
            let schedules = harness::dropout_schedules(&loaded.metrics, &loaded.manifest.spec.policy, window)?;
            print_json(&schedules)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

