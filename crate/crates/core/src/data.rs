//! Task datasets: a seeded synthetic "universe" of related tasks, a CSV
//! loader, and the fixed train/validation/test split.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PtaError, Result};
use crate::model::LossKind;
use crate::rng;
use crate::tensor::Tensor;

pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio(pub f64, pub f64, pub f64);

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio(0.5, 0.2, 0.3)
    }
}

impl SplitRatio {
    pub fn validate(&self) -> Result<()> {
        let SplitRatio(a, b, c) = *self;
        if [a, b, c].iter().any(|v| !(0.0..=1.0).contains(v)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(PtaError::validation(format!(
                "split fractions {a}/{b}/{c} must be in [0,1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Sample counts per split; train and validation are rounded, test takes
    /// the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.0 * n as f64).round() as usize).min(n);
        let val = ((self.1 * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// Split of every sample. Samples are ordered by a keyed hash of
/// `(seed, index)`; the first `train` go to training, the next `val` to
/// validation, the rest to test.
pub fn assign_splits(n: usize, ratio: SplitRatio, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (rng::derive_seed(seed, &[rng::TAG_SPLIT, i as u64]), i));
    let (train, val, _) = ratio.counts(n);
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    /// `N x C` regression targets.
    Regression(Tensor),
    /// Class indices with the number of classes.
    Classes { labels: Vec<usize>, num_classes: usize },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Regression(t) => t.dims2().map_or(0, |d| d.0),
            Labels::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Labels::Regression(t) => t.dims2().map_or(0, |d| d.1),
            Labels::Classes { num_classes, .. } => *num_classes,
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self {
            Labels::Regression(_) => LossKind::Mse,
            Labels::Classes { .. } => LossKind::CrossEntropy,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Result<Labels> {
        Ok(match self {
            Labels::Regression(t) => Labels::Regression(t.select_rows(idx)?),
            Labels::Classes { labels, num_classes } => Labels::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
        })
    }
}

/// Inputs and targets of one batch or one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub labels: Labels,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_id: usize,
    pub features: Tensor,
    pub labels: Labels,
    pub splits: Vec<Split>,
}

impl TaskDataset {
    pub fn new(task_id: usize, features: Tensor, labels: Labels, splits: Vec<Split>) -> Result<Self> {
        let (n, _) = features.expect_dims2("TaskDataset")?;
        if labels.len() != n || splits.len() != n {
            return Err(PtaError::validation(format!(
                "task {task_id}: {n} feature rows, {} labels, {} split entries",
                labels.len(),
                splits.len()
            )));
        }
        Ok(Self {
            task_id,
            features,
            labels,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.dims2().map_or(0, |d| d.1)
    }

    pub fn output_dim(&self) -> usize {
        self.labels.output_dim()
    }

    pub fn loss_kind(&self) -> LossKind {
        self.labels.loss_kind()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        Ok(Batch {
            features: self.features.select_rows(idx)?,
            labels: self.labels.select(idx)?,
        })
    }

    pub fn split_batch(&self, split: Split) -> Result<Batch> {
        let idx = self.indices(split);
        if idx.is_empty() {
            return Err(PtaError::validation(format!(
                "task {}: empty {split:?} split",
                self.task_id
            )));
        }
        self.batch(&idx)
    }

    /// Standardizes every feature column with mean and variance taken from
    /// the training split only. Returns the `(mean, std)` used per column.
    pub fn standardize(&mut self) -> Result<Vec<(f64, f64)>> {
        let train = self.indices(Split::Train);
        if train.is_empty() {
            return Err(PtaError::validation("cannot standardize without training rows"));
        }
        let stats = column_stats(&self.features, &train);
        let (_, cols) = self.features.dims2().unwrap();
        for row in self.features.values_mut().chunks_mut(cols) {
            for (v, (mean, std)) in row.iter_mut().zip(&stats) {
                *v = (*v - mean) / std;
            }
        }
        Ok(stats)
    }
}

/// Per-column `(mean, std)` over `rows`, with the variance floored.
pub fn column_stats(features: &Tensor, rows: &[usize]) -> Vec<(f64, f64)> {
    let (_, cols) = features.dims2().unwrap();
    let n = rows.len() as f64;
    (0..cols)
        .map(|c| {
            let col = rows.iter().map(|&r| features.values()[r * cols + c]);
            let mean = col.clone().sum::<f64>() / n;
            let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.max(VARIANCE_FLOOR).sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Regression,
    Classification,
}

/// A controllable family of related tasks. Each task's target function is
/// `mixing * shared(x) + (1 - mixing) * private_t(x)` read out through a
/// per-task linear head; classification takes the argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticUniverseSpec {
    pub num_tasks: usize,
    pub input_dim: usize,
    /// Samples per task; a single entry applies to every task.
    pub samples_per_task: Vec<usize>,
    pub teacher_width: usize,
    pub label_kind: LabelKind,
    /// Number of classes (classification) or output dimension (regression).
    pub outputs: usize,
    #[serde(default)]
    pub noise: f64,
    pub mixing: f64,
    /// When set, every task's readout head is drawn from this seed.
    #[serde(default)]
    pub shared_head_seed: Option<u64>,
    #[serde(default)]
    pub split: SplitRatio,
}

impl SyntheticUniverseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 || self.input_dim == 0 || self.teacher_width == 0 {
            return Err(PtaError::validation("universe dimensions must be >= 1"));
        }
        if self.outputs == 0 || (self.label_kind == LabelKind::Classification && self.outputs < 2) {
            return Err(PtaError::validation("need >= 1 output (>= 2 classes)"));
        }
        if !(0.0..=1.0).contains(&self.mixing) {
            return Err(PtaError::validation(format!("mixing {} outside [0, 1]", self.mixing)));
        }
        if !(self.noise >= 0.0) {
            return Err(PtaError::validation("noise must be >= 0"));
        }
        if self.samples_per_task.is_empty()
            || (self.samples_per_task.len() != 1 && self.samples_per_task.len() != self.num_tasks)
        {
            return Err(PtaError::validation(
                "samples_per_task needs one entry or one per task",
            ));
        }
        if self.samples_per_task.iter().any(|&n| n < 10) {
            return Err(PtaError::validation("every task needs >= 10 samples"));
        }
        self.split.validate()
    }

    pub fn samples(&self, task: usize) -> usize {
        if self.samples_per_task.len() == 1 {
            self.samples_per_task[0]
        } else {
            self.samples_per_task[task]
        }
    }
}

/// Drawn teacher networks of a universe.
#[derive(Debug, Clone)]
pub struct TeacherUniverse {
    spec: SyntheticUniverseSpec,
    seed: u64,
    shared: Tensor,
    private: Vec<Tensor>,
    heads: Vec<Tensor>,
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, r: &mut impl Rng) -> Tensor {
    let v = (0..rows * cols)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, r))
        .collect::<Vec<f64>>();
    Tensor::from_vec(vec![rows, cols], v).unwrap()
}

impl TeacherUniverse {
    pub fn new(spec: SyntheticUniverseSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (d, h, c) = (spec.input_dim, spec.teacher_width, spec.outputs);
        let in_scale = 1.0 / (d as f64).sqrt();
        let out_scale = 1.0 / (h as f64).sqrt();
        let shared = gaussian_matrix(d, h, in_scale, &mut rng::stream(seed, &[rng::TAG_DATA, 0]));
        let private = (0..spec.num_tasks)
            .map(|t| gaussian_matrix(d, h, in_scale, &mut rng::stream(seed, &[rng::TAG_DATA, 1, t as u64])))
            .collect();
        let heads = (0..spec.num_tasks)
            .map(|t| {
                let mut r = match spec.shared_head_seed {
                    Some(s) => rng::stream(s, &[rng::TAG_DATA, 2]),
                    None => rng::stream(seed, &[rng::TAG_DATA, 2, t as u64]),
                };
                // Larger readout scale keeps class logits well separated.
                gaussian_matrix(h, c, 3.0 * out_scale, &mut r)
            })
            .collect();
        Ok(Self {
            spec,
            seed,
            shared,
            private,
            heads,
        })
    }

    /// Noise-free teacher outputs of task `t` for each row of `x`.
    pub fn teacher_outputs(&self, t: usize, x: &Tensor) -> Vec<Vec<f64>> {
        let (n, d) = x.dims2().unwrap();
        let h = self.spec.teacher_width;
        let c = self.spec.outputs;
        let mix = self.spec.mixing;
        (0..n)
            .map(|i| {
                let xi = &x.values()[i * d..(i + 1) * d];
                let feat: Vec<f64> = (0..h)
                    .map(|j| {
                        let dot = |w: &Tensor| (0..d).map(|k| xi[k] * w.values()[k * h + j]).sum::<f64>();
                        mix * dot(&self.shared).tanh() + (1.0 - mix) * dot(&self.private[t]).tanh()
                    })
                    .collect();
                (0..c)
                    .map(|o| (0..h).map(|j| feat[j] * self.heads[t].values()[j * c + o]).sum())
                    .collect()
            })
            .collect()
    }

    /// Noise-free labels: argmax class, or the raw regression outputs.
    pub fn label_function(&self, t: usize, x: &Tensor) -> Vec<usize> {
        self.teacher_outputs(t, x).iter().map(|o| argmax(o)).collect()
    }

    pub fn sample_inputs(&self, n: usize, r: &mut impl Rng) -> Tensor {
        gaussian_matrix(n, self.spec.input_dim, 1.0, r)
    }

    pub fn generate(&self) -> Result<Vec<TaskDataset>> {
        (0..self.spec.num_tasks).map(|t| self.generate_task(t)).collect()
    }

    fn generate_task(&self, t: usize) -> Result<TaskDataset> {
        let n = self.spec.samples(t);
        let mut r = rng::stream(self.seed, &[rng::TAG_DATA, 3, t as u64]);
        let x = self.sample_inputs(n, &mut r);
        let outs = self.teacher_outputs(t, &x);
        let noise = self.spec.noise;
        let labels = match self.spec.label_kind {
            LabelKind::Classification => Labels::Classes {
                labels: outs
                    .iter()
                    .map(|o| {
                        let noisy: Vec<f64> = o
                            .iter()
                            .map(|v| v + noise * Distribution::<f64>::sample(&StandardNormal, &mut r))
                            .collect();
                        argmax(&noisy)
                    })
                    .collect(),
                num_classes: self.spec.outputs,
            },
            LabelKind::Regression => {
                let v = outs
                    .iter()
                    .flatten()
                    .map(|v| v + noise * Distribution::<f64>::sample(&StandardNormal, &mut r))
                    .collect();
                Labels::Regression(Tensor::from_vec(vec![n, self.spec.outputs], v)?)
            }
        };
        let split_seed = rng::derive_seed(self.seed, &[rng::TAG_SPLIT, t as u64]);
        let splits = assign_splits(n, self.spec.split, split_seed);
        TaskDataset::new(t, x, labels, splits)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn generate_universe(spec: &SyntheticUniverseSpec, seed: u64) -> Result<Vec<TaskDataset>> {
    TeacherUniverse::new(spec.clone(), seed)?.generate()
}

/// Loads one task from a headered CSV file. Features are every column other
/// than `label_column`; they are standardized with training-split statistics.
pub fn load_csv_task(
    path: &Path,
    label_column: &str,
    label_kind: LabelKind,
    ratio: SplitRatio,
    seed: u64,
    task_id: usize,
) -> Result<TaskDataset> {
    ratio.validate()?;
    let display = path.display().to_string();
    let csv_err = |line: u64, message: String| PtaError::Csv {
        path: display.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| csv_err(1, format!("no column named {label_column:?}")))?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != label_idx).collect();
    if feature_cols.is_empty() {
        return Err(csv_err(1, "no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(csv_err(
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        for &c in &feature_cols {
            let v: f64 = rec[c].trim().parse().map_err(|_| {
                csv_err(
                    line,
                    format!("non-numeric value {:?} in column {:?}", &rec[c], &headers[c]),
                )
            })?;
            features.push(v);
        }
        let l: f64 = rec[label_idx].trim().parse().map_err(|_| {
            csv_err(
                line,
                format!("non-numeric label {:?} in column {label_column:?}", &rec[label_idx]),
            )
        })?;
        raw_labels.push((line, l));
    }
    let n = raw_labels.len();
    if n == 0 {
        return Err(csv_err(1, "no data rows".into()));
    }

    let labels = match label_kind {
        LabelKind::Regression => Labels::Regression(Tensor::from_vec(
            vec![n, 1],
            raw_labels.iter().map(|&(_, l)| l).collect(),
        )?),
        LabelKind::Classification => {
            let mut labels = Vec::with_capacity(n);
            for &(line, l) in &raw_labels {
                if l < 0.0 || l.fract() != 0.0 {
                    return Err(csv_err(line, format!("class label {l} is not a non-negative integer")));
                }
                labels.push(l as usize);
            }
            let num_classes = labels.iter().max().unwrap() + 1;
            Labels::Classes {
                labels,
                num_classes: num_classes.max(2),
            }
        }
    };
    let features = Tensor::from_vec(vec![n, feature_cols.len()], features)?;
    let splits = assign_splits(n, ratio, seed);
    let mut ds = TaskDataset::new(task_id, features, labels, splits)?;
    ds.standardize()?;
    Ok(ds)
}

/// Writes a dataset in the form [`load_csv_task`] reads: `x0..x{d-1}` then
/// `label`. Only single-output datasets can be exported.
pub fn export_csv(ds: &TaskDataset, path: &Path) -> Result<()> {
    if let Labels::Regression(t) = &ds.labels {
        if t.dims2().map(|d| d.1) != Some(1) {
            return Err(PtaError::validation("CSV export supports one regression output"));
        }
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| PtaError::Io(e.into()))?;
    let d = ds.input_dim();
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| PtaError::Io(e.into()))?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.features.row_slice(i).iter().map(|v| format!("{v:?}")).collect();
        row.push(match &ds.labels {
            Labels::Regression(t) => format!("{:?}", t.values()[i]),
            Labels::Classes { labels, .. } => labels[i].to_string(),
        });
        w.write_record(&row).map_err(|e| PtaError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn universe(mixing: f64, tasks: usize) -> SyntheticUniverseSpec {
        SyntheticUniverseSpec {
            num_tasks: tasks,
            input_dim: 8,
            samples_per_task: vec![100],
            teacher_width: 12,
            label_kind: LabelKind::Classification,
            outputs: 4,
            noise: 0.0,
            mixing,
            shared_head_seed: None,
            split: SplitRatio::default(),
        }
    }

    #[test]
    fn split_counts_exact_for_100() {
        let s = assign_splits(100, SplitRatio::default(), 5);
        let count = |x| s.iter().filter(|&&v| v == x).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (50, 20, 30));
        assert_eq!(s, assign_splits(100, SplitRatio::default(), 5));
        assert_ne!(s, assign_splits(100, SplitRatio::default(), 6));
    }

    #[test]
    fn full_sharing_gives_identical_label_functions() {
        let mut spec = universe(1.0, 2);
        spec.shared_head_seed = Some(9);
        let u = TeacherUniverse::new(spec, 1).unwrap();
        let x = u.sample_inputs(500, &mut rng::stream(0, &[]));
        assert_eq!(u.label_function(0, &x), u.label_function(1, &x));
    }

    #[test]
    fn no_sharing_gives_chance_agreement() {
        // A single pair of independent teachers can correlate by accident;
        // across universes the excess agreement averages out.
        let mut excess = 0.0;
        for seed in 0..40 {
            let u = TeacherUniverse::new(universe(0.0, 2), seed).unwrap();
            let x = u.sample_inputs(2000, &mut rng::stream(seed, &[1]));
            let a = u.label_function(0, &x);
            let b = u.label_function(1, &x);
            let n = a.len() as f64;
            let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / n;
            let freq = |v: &[usize], c| v.iter().filter(|&&l| l == c).count() as f64 / n;
            let chance: f64 = (0..4).map(|c| freq(&a, c) * freq(&b, c)).sum();
            excess += (agree - chance) / 40.0;
        }
        assert!(excess.abs() < 0.03, "mean excess agreement {excess}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_universe(&universe(0.5, 3), 7).unwrap();
        let b = generate_universe(&universe(0.5, 3), 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_universe(&universe(0.5, 3), 8).unwrap());
    }

    #[test]
    fn degenerate_specs_rejected() {
        let mut s = universe(1.5, 1);
        assert!(s.validate().is_err());
        s.mixing = 0.5;
        s.samples_per_task = vec![5];
        assert!(s.validate().is_err());
        s.samples_per_task = vec![20, 30];
        assert!(s.validate().is_err());
    }

    fn write_csv(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn csv_split_sizes_and_constant_column() {
        let mut lines = vec!["a,const,y".to_string()];
        for i in 0..100 {
            lines.push(format!("{},{},{}", i as f64 * 0.5, 3.0, i % 3));
        }
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let f = write_csv(&refs);
        let ds = load_csv_task(f.path(), "y", LabelKind::Classification, SplitRatio::default(), 4, 0)
            .unwrap();
        assert_eq!(ds.indices(Split::Train).len(), 50);
        assert_eq!(ds.indices(Split::Val).len(), 20);
        assert_eq!(ds.indices(Split::Test).len(), 30);
        assert!((0..100).all(|i| ds.features.values()[i * 2 + 1] == 0.0));
        let again = load_csv_task(f.path(), "y", LabelKind::Classification, SplitRatio::default(), 4, 0)
            .unwrap();
        assert_eq!(ds.splits, again.splits);
    }

    #[test]
    fn csv_errors_name_line_and_column() {
        let f = write_csv(&["a,b,y", "1,2,0", "1,oops,1"]);
        let err = load_csv_task(f.path(), "y", LabelKind::Classification, SplitRatio::default(), 0, 0)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3") && err.contains("\"b\""), "{err}");

        let f = write_csv(&["a,b,y", "1,2,0", "1,2"]);
        let err = load_csv_task(f.path(), "y", LabelKind::Regression, SplitRatio::default(), 0, 0)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn standardization_uses_training_rows_only() {
        let x = Tensor::from_vec(vec![4, 1], vec![0.0, 2.0, 10.0, 20.0]).unwrap();
        let labels = Labels::Regression(Tensor::zeros(vec![4, 1]));
        let splits = vec![Split::Train, Split::Train, Split::Val, Split::Test];
        let mut ds = TaskDataset::new(0, x.clone(), labels, splits).unwrap();
        let stats = ds.standardize().unwrap();
        assert_eq!(stats, vec![(1.0, 1.0)]);
        let leaky = column_stats(&x, &[0, 1, 2]);
        assert_ne!(stats, leaky);
        assert_eq!(ds.features.values(), &[-1.0, 1.0, 9.0, 19.0]);
    }

    #[test]
    fn export_then_load_roundtrip() {
        let mut spec = universe(0.5, 1);
        spec.samples_per_task = vec![40];
        let ds = &generate_universe(&spec, 2).unwrap()[0];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        export_csv(ds, &p).unwrap();
        let back = load_csv_task(&p, "label", LabelKind::Classification, SplitRatio::default(), 0, 0)
            .unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.input_dim(), 8);
    }
}
