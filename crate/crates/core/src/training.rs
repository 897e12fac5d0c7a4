//! Joint multi-decoder training: the loss over all (task, decoder) pairs,
//! optimizers, the three evaluation modes, and the meta-iteration loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{self, ControlPolicy};
use crate::data::{Batch, Labels, Split, TaskDataset};
use crate::error::{PtaError, Result};
use crate::graph::{Graph, Mode, NodeId};
use crate::model::{DecoderBinding, LossKind, ModelBinding, ModelSpec, TaskHead, UnderlyingModel};
use crate::rng;
use crate::tensor::Tensor;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Whether tasks share one underlying model or each task gets its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    #[default]
    Shared,
    PerTask,
}

/// How per-decoder losses of a task are combined.
///
/// `Mean` divides by the number of decoders, so duplicated decoders give the
/// same loss as one. `Sum` adds them, which is the form whose gradient step
/// at rate `gamma / D` reproduces a single decoder at rate `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderReduction {
    #[default]
    Mean,
    Sum,
}

/// The shared model(s) plus every task's decoder bank.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub models: Vec<UnderlyingModel>,
    /// Index into `models` for each task.
    pub task_model: Vec<usize>,
    pub heads: Vec<TaskHead>,
}

/// Output width and loss of one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskShape {
    pub output_dim: usize,
    pub loss_kind: LossKind,
}

impl From<&TaskDataset> for TaskShape {
    fn from(ds: &TaskDataset) -> Self {
        TaskShape {
            output_dim: ds.output_dim(),
            loss_kind: ds.loss_kind(),
        }
    }
}

impl JointModel {
    /// Fresh model(s) and zero decoders; decoders still need a policy init.
    pub fn new(
        spec: &ModelSpec,
        tasks: &[TaskShape],
        num_decoders: usize,
        sharing: Sharing,
        seed: u64,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(PtaError::validation("need at least one task"));
        }
        let (models, task_model) = match sharing {
            Sharing::Shared => (vec![UnderlyingModel::new(spec.clone(), seed)?], vec![0; tasks.len()]),
            Sharing::PerTask => {
                let models = (0..tasks.len())
                    .map(|t| UnderlyingModel::new(spec.clone(), rng::derive_seed(seed, &[t as u64])))
                    .collect::<Result<Vec<_>>>()?;
                (models, (0..tasks.len()).collect())
            }
        };
        let heads = tasks
            .iter()
            .enumerate()
            .map(|(t, s)| TaskHead::new(t, num_decoders, spec.embedding_dim, s.output_dim, s.loss_kind))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            models,
            task_model,
            heads,
        })
    }

    pub fn single(model: UnderlyingModel, heads: Vec<TaskHead>) -> Self {
        let n = heads.len();
        Self {
            models: vec![model],
            task_model: vec![0; n],
            heads,
        }
    }

    pub fn model_for(&self, task: usize) -> &UnderlyingModel {
        &self.models[self.task_model[task]]
    }

    pub fn num_decoders(&self) -> usize {
        self.heads.first().map_or(0, |h| h.num_decoders())
    }

    fn tasks_sharing_model(&self, task: usize) -> usize {
        let m = self.task_model[task];
        self.task_model.iter().filter(|&&x| x == m).count()
    }

    pub fn zero_grad(&mut self) {
        self.models.iter_mut().for_each(UnderlyingModel::zero_grad);
        for h in &mut self.heads {
            h.decoders.iter_mut().for_each(|d| d.zero_grad());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub independent_dropout: bool,
    pub reduction: DecoderReduction,
    pub mode: Mode,
    /// Base seed for this step's dropout masks.
    pub mask_seed: u64,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            independent_dropout: false,
            reduction: DecoderReduction::Mean,
            mode: Mode::Train,
            mask_seed: 0,
        }
    }
}

/// A recorded forward pass of the joint loss.
#[derive(Debug)]
pub struct LossGraph {
    pub graph: Graph,
    pub loss: NodeId,
    pub embeddings: Vec<NodeId>,
    pub per_decoder: Vec<Vec<NodeId>>,
    model_bindings: Vec<ModelBinding>,
    decoder_bindings: Vec<Vec<DecoderBinding>>,
}

impl LossGraph {
    pub fn value(&self) -> f64 {
        self.graph.value(self.loss).values()[0]
    }
}

fn sample_loss(g: &mut Graph, kind: LossKind, pred: NodeId, labels: &Labels) -> Result<NodeId> {
    match (kind, labels) {
        (LossKind::Mse, Labels::Regression(t)) => g.mse_loss(pred, t),
        (LossKind::CrossEntropy, Labels::Classes { labels, .. }) => g.softmax_cross_entropy(pred, labels),
        _ => Err(PtaError::validation("labels do not match the task's loss kind")),
    }
}

/// Joint loss over every task and decoder:
/// `sum_t w_t * mean_i sum_d L(y_ti, yhat_tdi)` with `w_t = 1/(T*D)` for
/// [`DecoderReduction::Mean`] and `1/T` for `Sum`, `T` counting the tasks
/// that share task `t`'s underlying model. Each task's embedding is computed
/// once and reused by all of its decoders.
pub fn pta_loss(joint: &JointModel, batches: &[Batch], opts: &LossOptions) -> Result<LossGraph> {
    if batches.len() != joint.heads.len() {
        return Err(PtaError::validation(format!(
            "{} batches for {} tasks",
            batches.len(),
            joint.heads.len()
        )));
    }
    let d_count = joint.num_decoders();
    if joint.heads.iter().any(|h| h.num_decoders() != d_count) {
        return Err(PtaError::validation("all tasks must have the same number of decoders"));
    }
    let mut g = Graph::new();
    let mut terms = Vec::new();
    let mut embeddings = Vec::new();
    let mut per_decoder = Vec::new();
    let mut model_bindings = Vec::new();
    let mut decoder_bindings = Vec::new();

    for (t, (head, batch)) in joint.heads.iter().zip(batches).enumerate() {
        if batch.is_empty() {
            return Err(PtaError::validation(format!("task {t}: empty batch")));
        }
        let task_seed = rng::derive_seed(opts.mask_seed, &[t as u64]);
        let x = g.leaf(&batch.features);
        let model = joint.model_for(t);
        let (emb, mb) = model.embed(&mut g, x, opts.mode, rng::derive_seed(task_seed, &[u64::MAX]))?;
        embeddings.push(emb);
        model_bindings.push(mb);

        let weight = match opts.reduction {
            DecoderReduction::Mean => 1.0 / (joint.tasks_sharing_model(t) * d_count) as f64,
            DecoderReduction::Sum => 1.0 / joint.tasks_sharing_model(t) as f64,
        };
        let mut losses = Vec::with_capacity(d_count);
        let mut bindings = Vec::with_capacity(d_count);
        for d in 0..d_count {
            let (pred, db) = head.decode(&mut g, emb, d, opts.mode, task_seed, opts.independent_dropout)?;
            let l = sample_loss(&mut g, head.loss_kind, pred, &batch.labels)?;
            let v = g.value(l).values()[0];
            if !v.is_finite() {
                return Err(PtaError::Divergence {
                    task: t,
                    decoder: d,
                    value: v,
                });
            }
            terms.push(g.scale(l, weight));
            losses.push(l);
            bindings.push(db);
        }
        per_decoder.push(losses);
        decoder_bindings.push(bindings);
    }
    let loss = g.sum(&terms)?;
    Ok(LossGraph {
        graph: g,
        loss,
        embeddings,
        per_decoder,
        model_bindings,
        decoder_bindings,
    })
}

/// Runs backward on a loss graph and adds the gradients into the joint
/// model's parameters.
pub fn accumulate_gradients(joint: &mut JointModel, lg: &mut LossGraph) -> Result<()> {
    lg.graph.backward(lg.loss)?;
    for t in 0..joint.heads.len() {
        let m = joint.task_model[t];
        joint.models[m].absorb_grads(&lg.graph, &lg.model_bindings[t]);
        for (d, &b) in lg.decoder_bindings[t].iter().enumerate() {
            joint.heads[t].absorb_grads(&lg.graph, d, b);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::adam()
        }
    }

    pub fn adam() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(PtaError::validation("learning rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(PtaError::validation("invalid Adam settings"));
        }
        Ok(())
    }
}

/// Optimizer state for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    timestep: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        let moments = if config.kind == OptimizerKind::Adam { len } else { 0 };
        Self {
            config,
            first: vec![0.0; moments],
            second: vec![0.0; moments],
            timestep: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    /// Applies one update from `param`'s accumulated gradient.
    pub fn apply(&mut self, param: &mut Tensor) {
        self.timestep += 1;
        let lr = self.config.learning_rate;
        let grad = param.grad().to_vec();
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in param.values_mut().iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig { beta1, beta2, epsilon, .. } = self.config;
                let t = self.timestep as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (i, p) in param.values_mut().iter_mut().enumerate() {
                    let g = grad[i];
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.first[i] / c1;
                    let v_hat = self.second[i] / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}

/// Optimizer states for every parameter of a [`JointModel`].
#[derive(Debug, Clone)]
pub struct JointOptimizer {
    models: Vec<Vec<OptimizerState>>,
    decoders: Vec<Vec<[OptimizerState; 2]>>,
}

impl JointOptimizer {
    pub fn new(joint: &JointModel, config: OptimizerConfig) -> Self {
        Self::with_rates(joint, config, config.learning_rate)
    }

    /// Separate learning rates for the underlying model(s) and the decoders.
    pub fn with_rates(joint: &JointModel, config: OptimizerConfig, decoder_lr: f64) -> Self {
        let dec_config = config.with_learning_rate(decoder_lr);
        let models = joint
            .models
            .iter()
            .map(|m| m.params().map(|p| OptimizerState::new(config, p.len())).collect())
            .collect();
        let decoders = joint
            .heads
            .iter()
            .map(|h| {
                h.decoders
                    .iter()
                    .map(|d| {
                        [
                            OptimizerState::new(dec_config, d.weights.len()),
                            OptimizerState::new(dec_config, d.bias.len()),
                        ]
                    })
                    .collect()
            })
            .collect();
        Self { models, decoders }
    }

    /// Updates every model parameter and every non-frozen decoder. Frozen
    /// decoders' gradients are discarded.
    pub fn step(&mut self, joint: &mut JointModel) {
        for (model, states) in joint.models.iter_mut().zip(&mut self.models) {
            for (p, s) in model.params_mut().zip(states.iter_mut()) {
                s.apply(p);
            }
        }
        for (head, states) in joint.heads.iter_mut().zip(&mut self.decoders) {
            for (dec, [sw, sb]) in head.decoders.iter_mut().zip(states.iter_mut()) {
                if dec.frozen {
                    dec.zero_grad();
                    continue;
                }
                sw.apply(&mut dec.weights);
                sb.apply(&mut dec.bias);
            }
        }
    }
}

/// One joint gradient step. Returns the loss before the update.
pub fn train_step(
    joint: &mut JointModel,
    optimizer: &mut JointOptimizer,
    batches: &[Batch],
    opts: &LossOptions,
) -> Result<f64> {
    joint.zero_grad();
    let mut lg = pta_loss(joint, batches, opts)?;
    accumulate_gradients(joint, &mut lg)?;
    optimizer.step(joint);
    Ok(lg.value())
}

/// Validation cost (same loss as training) and reported error: the
/// misclassification rate for classification, mean squared error otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub cost: f64,
    pub error: f64,
}

pub fn score_predictions(kind: LossKind, pred: &Tensor, labels: &Labels) -> Result<Score> {
    let mut g = Graph::new();
    let p = g.leaf(pred);
    let l = sample_loss(&mut g, kind, p, labels)?;
    let cost = g.value(l).values()[0];
    let error = match labels {
        Labels::Regression(_) => cost,
        Labels::Classes { labels, .. } => {
            let (n, _) = pred.dims2().unwrap();
            let wrong = (0..n)
                .filter(|&i| {
                    let row = pred.row_slice(i);
                    let mut best = 0;
                    for (c, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = c;
                        }
                    }
                    best != labels[i]
                })
                .count();
            wrong as f64 / n as f64
        }
    };
    Ok(Score { cost, error })
}

/// Evaluation-mode outputs of every decoder of task `t`, one embedding pass.
pub fn decoder_predictions(joint: &JointModel, t: usize, batch: &Batch) -> Result<Vec<Tensor>> {
    if batch.is_empty() {
        return Err(PtaError::validation(format!("task {t}: empty evaluation set")));
    }
    let mut g = Graph::new();
    let x = g.leaf(&batch.features);
    let (emb, _) = joint.model_for(t).embed(&mut g, x, Mode::Eval, 0)?;
    let head = &joint.heads[t];
    (0..head.num_decoders())
        .map(|d| {
            let (y, _) = head.decode(&mut g, emb, d, Mode::Eval, 0, false)?;
            Ok(g.value(y).clone())
        })
        .collect()
}

/// Scores of every decoder of every task on `sets` (one batch per task).
pub fn decoder_scores(joint: &JointModel, sets: &[Batch]) -> Result<Vec<Vec<Score>>> {
    sets.iter()
        .enumerate()
        .map(|(t, set)| {
            let kind = joint.heads[t].loss_kind;
            decoder_predictions(joint, t, set)?
                .iter()
                .map(|p| score_predictions(kind, p, &set.labels))
                .collect()
        })
        .collect()
}

pub fn evaluate_decoder(joint: &JointModel, t: usize, d: usize, set: &Batch) -> Result<Score> {
    let preds = decoder_predictions(joint, t, set)?;
    let pred = preds
        .get(d)
        .ok_or_else(|| PtaError::validation(format!("decoder index {d} out of range")))?;
    score_predictions(joint.heads[t].loss_kind, pred, &set.labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBest {
    pub decoder: usize,
    pub cost: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestEvaluation {
    pub tasks: Vec<TaskBest>,
    /// Mean over tasks of the per-task minimum cost.
    pub aggregate_cost: f64,
    /// Mean over tasks of the selected decoders' errors.
    pub aggregate_error: f64,
}

/// Picks the lowest-cost decoder of each task from precomputed scores.
pub fn select_best(scores: &[Vec<Score>]) -> BestEvaluation {
    let tasks: Vec<TaskBest> = scores
        .iter()
        .map(|s| {
            let costs: Vec<f64> = s.iter().map(|x| x.cost).collect();
            let d = control::best_index(&costs).unwrap_or(0);
            TaskBest {
                decoder: d,
                cost: s[d].cost,
                error: s[d].error,
            }
        })
        .collect();
    let n = tasks.len() as f64;
    BestEvaluation {
        aggregate_cost: tasks.iter().map(|t| t.cost).sum::<f64>() / n,
        aggregate_error: tasks.iter().map(|t| t.error).sum::<f64>() / n,
        tasks,
    }
}

/// Best-decoder evaluation: per task the decoder with the lowest validation
/// cost, ties to the lowest index.
pub fn evaluate_best(joint: &JointModel, validation: &[Batch]) -> Result<BestEvaluation> {
    Ok(select_best(&decoder_scores(joint, validation)?))
}

/// Scores of the decoder-averaged prediction of each task.
pub fn evaluate_ensemble(joint: &JointModel, sets: &[Batch]) -> Result<Vec<Score>> {
    sets.iter()
        .enumerate()
        .map(|(t, set)| {
            let preds = decoder_predictions(joint, t, set)?;
            let mut avg = preds[0].clone();
            for p in &preds[1..] {
                for (a, v) in avg.values_mut().iter_mut().zip(p.values()) {
                    *a += v;
                }
            }
            let k = preds.len() as f64;
            avg.values_mut().iter_mut().for_each(|a| *a /= k);
            score_predictions(joint.heads[t].loss_kind, &avg, &set.labels)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    /// Gradient steps per meta-iteration.
    pub meta_iteration_length: usize,
    pub meta_iterations: usize,
    pub batch_size: usize,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.meta_iteration_length == 0 || self.batch_size == 0 {
            return Err(PtaError::validation(
                "meta-iteration length and batch size must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Seeded mini-batch sampler over one task's training rows, reshuffled
/// each epoch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(mut indices: Vec<usize>, batch_size: usize, seed: u64) -> Result<Self> {
        if indices.is_empty() {
            return Err(PtaError::validation("no training rows to sample"));
        }
        let mut rng = rng::stream(seed, &[rng::TAG_BATCHES]);
        indices.shuffle(&mut rng);
        Ok(Self {
            batch_size: batch_size.min(indices.len()),
            order: indices,
            cursor: 0,
            rng,
        })
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub model: ModelSpec,
    pub num_decoders: usize,
    pub policy: ControlPolicy,
    pub schedule: TrainSchedule,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub reduction: DecoderReduction,
    #[serde(default)]
    pub sharing: Sharing,
    pub seed: u64,
    #[serde(default)]
    pub snapshots: bool,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_decoders == 0 {
            return Err(PtaError::validation("need at least one decoder per task"));
        }
        self.model.validate()?;
        self.policy.validate()?;
        self.schedule.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub decoder: usize,
    pub val_cost: f64,
    pub val_error: f64,
}

/// One line of the metrics stream, written after every meta-iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema: u32,
    pub meta_iteration: usize,
    /// Mean joint loss over the meta-iteration's gradient steps.
    pub train_loss: f64,
    /// `costs[t][d]`: the validation cost handed to the decoder update;
    /// `null` when not finite.
    pub costs: Vec<Vec<Option<f64>>>,
    /// `[t, d]` pairs whose cost was not finite.
    pub divergent: Vec<[usize; 2]>,
    pub val_errors: Vec<Vec<f64>>,
    pub best: Vec<BestRecord>,
    pub best_val_error: f64,
    pub dropout_rates: Vec<Vec<f64>>,
    #[serde(skip)]
    pub wall_clock_ms: f64,
}

impl MetricsRecord {
    /// Costs as `f64`, `null` read back as `+inf`.
    pub fn cost_values(&self) -> Vec<Vec<f64>> {
        self.costs
            .iter()
            .map(|r| r.iter().map(|c| c.unwrap_or(f64::INFINITY)).collect())
            .collect()
    }
}

/// One decoder's state at the end of a meta-iteration's evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySnapshot {
    pub meta_iteration: usize,
    pub task_id: usize,
    pub decoder_index: usize,
    /// Weights (row-major) then bias.
    pub params: Vec<f64>,
    pub cost: Option<f64>,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalEvaluation {
    pub validation: BestEvaluation,
    /// Test error of each task's selected decoder.
    pub test_errors: Vec<f64>,
    pub test_error: f64,
    pub ensemble_test_errors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub joint: JointModel,
    pub metrics: Vec<MetricsRecord>,
    pub snapshots: Vec<TrajectorySnapshot>,
    pub final_eval: FinalEvaluation,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Split batches of every task.
pub fn split_sets(datasets: &[TaskDataset], split: Split) -> Result<Vec<Batch>> {
    datasets.iter().map(|d| d.split_batch(split)).collect()
}

pub fn final_evaluation(joint: &JointModel, datasets: &[TaskDataset]) -> Result<FinalEvaluation> {
    let val = split_sets(datasets, Split::Val)?;
    let test = split_sets(datasets, Split::Test)?;
    let validation = evaluate_best(joint, &val)?;
    let test_errors = validation
        .tasks
        .iter()
        .enumerate()
        .map(|(t, b)| evaluate_decoder(joint, t, b.decoder, &test[t]).map(|s| s.error))
        .collect::<Result<Vec<_>>>()?;
    let ensemble_test_errors = evaluate_ensemble(joint, &test)?.iter().map(|s| s.error).collect();
    Ok(FinalEvaluation {
        test_error: test_errors.iter().sum::<f64>() / test_errors.len() as f64,
        validation,
        test_errors,
        ensemble_test_errors,
    })
}

/// Builds a joint model for `datasets` and runs the policy's initializer.
pub fn initialize(spec: &RunSpec, datasets: &[TaskDataset]) -> Result<JointModel> {
    spec.validate()?;
    if datasets.is_empty() {
        return Err(PtaError::validation("no task datasets"));
    }
    if let Some(bad) = datasets.iter().find(|d| d.input_dim() != spec.model.input_dim) {
        return Err(PtaError::validation(format!(
            "task {} has {} features, model expects {}",
            bad.task_id,
            bad.input_dim(),
            spec.model.input_dim
        )));
    }
    let shapes: Vec<TaskShape> = datasets.iter().map(TaskShape::from).collect();
    let mut joint = JointModel::new(
        &spec.model,
        &shapes,
        spec.num_decoders,
        spec.sharing,
        rng::derive_seed(spec.seed, &[rng::TAG_MODEL_INIT]),
    )?;
    control::dec_initialize(
        &spec.policy,
        &mut joint.heads,
        rng::derive_seed(spec.seed, &[rng::TAG_DECODER_INIT]),
    );
    Ok(joint)
}

/// The meta-iteration training loop. Every finished [`MetricsRecord`] is
/// passed to `sink` before the next meta-iteration starts, so a failing
/// run still leaves its completed records behind.
pub fn run(
    spec: &RunSpec,
    datasets: &[TaskDataset],
    sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
) -> Result<RunOutput> {
    let mut joint = initialize(spec, datasets)?;
    let mut optimizer = JointOptimizer::new(&joint, spec.optimizer);
    let mut samplers = datasets
        .iter()
        .map(|d| {
            BatchSampler::new(
                d.indices(Split::Train),
                spec.schedule.batch_size,
                rng::derive_seed(spec.seed, &[rng::TAG_BATCHES, d.task_id as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let val = split_sets(datasets, Split::Val)?;

    let mut metrics = Vec::new();
    let mut snapshots = Vec::new();
    let mut step: u64 = 0;
    for meta in 0..spec.schedule.meta_iterations {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        for _ in 0..spec.schedule.meta_iteration_length {
            let batches = samplers
                .iter_mut()
                .zip(datasets)
                .map(|(s, d)| d.batch(&s.next_indices()))
                .collect::<Result<Vec<_>>>()?;
            let opts = LossOptions {
                independent_dropout: spec.policy.flags.independent_dropout,
                reduction: spec.reduction,
                mode: Mode::Train,
                mask_seed: rng::derive_seed(spec.seed, &[rng::TAG_MASK, step]),
            };
            loss_sum += train_step(&mut joint, &mut optimizer, &batches, &opts)?;
            step += 1;
        }

        let scores = decoder_scores(&joint, &val)?;
        let costs: Vec<Vec<f64>> = scores.iter().map(|s| s.iter().map(|x| x.cost).collect()).collect();
        let best = select_best(&scores);
        let record = MetricsRecord {
            schema: METRICS_SCHEMA_VERSION,
            meta_iteration: meta,
            train_loss: loss_sum / spec.schedule.meta_iteration_length as f64,
            costs: costs.iter().map(|r| r.iter().map(|&c| finite(c)).collect()).collect(),
            divergent: costs
                .iter()
                .enumerate()
                .flat_map(|(t, r)| {
                    r.iter()
                        .enumerate()
                        .filter(|(_, c)| !c.is_finite())
                        .map(move |(d, _)| [t, d])
                })
                .collect(),
            val_errors: scores.iter().map(|s| s.iter().map(|x| x.error).collect()).collect(),
            best: best
                .tasks
                .iter()
                .map(|b| BestRecord {
                    decoder: b.decoder,
                    val_cost: b.cost,
                    val_error: b.error,
                })
                .collect(),
            best_val_error: best.aggregate_error,
            dropout_rates: joint
                .heads
                .iter()
                .map(|h| h.decoders.iter().map(|d| d.dropout_rate).collect())
                .collect(),
            wall_clock_ms: 0.0,
        };

        if spec.snapshots {
            for (t, head) in joint.heads.iter().enumerate() {
                for (d, dec) in head.decoders.iter().enumerate() {
                    snapshots.push(TrajectorySnapshot {
                        meta_iteration: meta,
                        task_id: head.task_id,
                        decoder_index: d,
                        params: dec.flatten(),
                        cost: finite(costs[t][d]),
                        dropout_rate: dec.dropout_rate,
                    });
                }
            }
        }

        for (t, head) in joint.heads.iter_mut().enumerate() {
            let mut r = control::control_stream(spec.seed, t, meta);
            control::dec_update(&spec.policy, head, &costs[t], &mut r)?;
        }

        let mut record = record;
        record.wall_clock_ms = started.elapsed().as_secs_f64() * 1e3;
        sink(&record)?;
        metrics.push(record);
    }

    let final_eval = final_evaluation(&joint, datasets)?;
    Ok(RunOutput {
        joint,
        metrics,
        snapshots,
        final_eval,
    })
}
