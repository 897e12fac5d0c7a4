use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{
    ControlPolicy, PolicyFlags, DEFAULT_HYPERPERTURB_VARIANCE, DEFAULT_INITIAL_DROPOUT, DEFAULT_PERTURB_VARIANCE,
    DEFAULT_RATE_CLAMP,
};
use crate::data::{generate_universe, load_csv_task, LabelKind, SplitRatio, SyntheticUniverseSpec, TaskDataset};
use crate::error::{PtaError, Result};
use crate::model::ModelSpec;
use crate::rng;
use crate::training::{DecoderReduction, OptimizerConfig, RunSpec, Sharing, TrainSchedule};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvTask {
    pub path: PathBuf,
    pub label_column: String,
    pub label_kind: LabelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticUniverseSpec),
    Csv {
        tasks: Vec<CsvTask>,
        #[serde(default)]
        split: SplitRatio,
    },
}

/// A policy given by name (`"PTA-HGD"`) or as explicit flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyChoice {
    Name(String),
    Flags(PolicyFlags),
}

impl PolicyChoice {
    pub fn flags(&self) -> Result<PolicyFlags> {
        match self {
            PolicyChoice::Name(n) => n.parse(),
            PolicyChoice::Flags(f) => Ok(*f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSettings {
    #[serde(default = "perturb_variance")]
    pub perturb_variance: f64,
    #[serde(default = "hyperperturb_variance")]
    pub hyperperturb_variance: f64,
    #[serde(default = "rate_clamp")]
    pub rate_clamp: (f64, f64),
    #[serde(default = "initial_dropout")]
    pub initial_dropout: f64,
}

fn perturb_variance() -> f64 {
    DEFAULT_PERTURB_VARIANCE
}
fn hyperperturb_variance() -> f64 {
    DEFAULT_HYPERPERTURB_VARIANCE
}
fn rate_clamp() -> (f64, f64) {
    DEFAULT_RATE_CLAMP
}
fn initial_dropout() -> f64 {
    DEFAULT_INITIAL_DROPOUT
}

impl Default for ControlSettings {
    fn default() -> Self {
        Self {
            perturb_variance: DEFAULT_PERTURB_VARIANCE,
            hyperperturb_variance: DEFAULT_HYPERPERTURB_VARIANCE,
            rate_clamp: DEFAULT_RATE_CLAMP,
            initial_dropout: DEFAULT_INITIAL_DROPOUT,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("pta-out")
}

fn default_true() -> bool {
    true
}

/// Declarative experiment: one dataset source, and the cross product of
/// `policies x decoders x seeds` for sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub data: DataSource,
    pub model: ModelSpec,
    pub decoders: Vec<usize>,
    pub policies: Vec<PolicyChoice>,
    #[serde(default)]
    pub control: ControlSettings,
    pub schedule: TrainSchedule,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub reduction: DecoderReduction,
    #[serde(default)]
    pub sharing: Sharing,
    pub seeds: Vec<u64>,
    /// Fixed dataset seed; by default each run seed draws its own dataset.
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub snapshots: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PtaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        // CSV paths are relative to the config file.
        if let (DataSource::Csv { tasks, .. }, Some(dir)) = (&mut cfg.data, path.parent()) {
            for t in tasks {
                if t.path.is_relative() {
                    t.path = dir.join(&t.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(PtaError::Config(format!(
                "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.decoders.is_empty() || self.decoders.contains(&0) {
            return Err(PtaError::Config("decoders must be a non-empty list of counts >= 1".into()));
        }
        if self.policies.is_empty() {
            return Err(PtaError::Config("at least one policy is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(PtaError::Config("at least one seed is required".into()));
        }
        for p in &self.policies {
            self.policy(p)?.validate().map_err(|e| PtaError::Config(e.to_string()))?;
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
            if s.input_dim != self.model.input_dim {
                return Err(PtaError::Config(format!(
                    "data input_dim {} != model input_dim {}",
                    s.input_dim, self.model.input_dim
                )));
            }
        }
        if let DataSource::Csv { tasks, split } = &self.data {
            if tasks.is_empty() {
                return Err(PtaError::Config("csv source needs at least one task".into()));
            }
            split.validate()?;
        }
        self.model.validate()?;
        self.schedule.validate()?;
        self.optimizer.validate()
    }

    pub fn policy(&self, choice: &PolicyChoice) -> Result<ControlPolicy> {
        Ok(ControlPolicy {
            flags: choice.flags().map_err(|e| PtaError::Config(e.to_string()))?,
            perturb_variance: self.control.perturb_variance,
            hyperperturb_variance: self.control.hyperperturb_variance,
            rate_clamp: self.control.rate_clamp,
            initial_dropout: self.control.initial_dropout,
        })
    }

    pub fn run_spec(&self, policy: &PolicyChoice, decoders: usize, seed: u64) -> Result<RunSpec> {
        Ok(RunSpec {
            model: self.model.clone(),
            num_decoders: decoders,
            policy: self.policy(policy)?,
            schedule: self.schedule,
            optimizer: self.optimizer,
            reduction: self.reduction,
            sharing: self.sharing,
            seed,
            snapshots: self.snapshots,
        })
    }

    pub fn data_seed_for(&self, run_seed: u64) -> u64 {
        self.data_seed
            .unwrap_or_else(|| rng::derive_seed(run_seed, &[rng::TAG_DATA]))
    }

    pub fn datasets(&self, run_seed: u64) -> Result<Vec<TaskDataset>> {
        let seed = self.data_seed_for(run_seed);
        match &self.data {
            DataSource::Synthetic(spec) => generate_universe(spec, seed),
            DataSource::Csv { tasks, split } => tasks
                .iter()
                .enumerate()
                .map(|(t, c)| {
                    load_csv_task(&c.path, &c.label_column, c.label_kind, *split, rng::derive_seed(seed, &[t as u64]), t)
                })
                .collect(),
        }
    }
}
