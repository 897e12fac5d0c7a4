//! Central finite-difference checks of the joint-loss gradients on
//! randomized models, decoder banks, and losses.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Labels};
use crate::error::Result;
use crate::graph::Mode;
use crate::model::{Activation, LayerSpec, LossKind, ModelSpec, TaskHead, UnderlyingModel};
use crate::rng;
use crate::tensor::Tensor;
use crate::training::{accumulate_gradients, pta_loss, DecoderReduction, JointModel, LossOptions};

pub const STEP: f64 = 1e-5;
pub const RELATIVE_TOLERANCE: f64 = 1e-5;
/// Gradient magnitudes below this are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradcheckCase {
    pub joint: JointModel,
    pub batches: Vec<Batch>,
    pub opts: LossOptions,
}

fn pick<T: Copy>(r: &mut impl Rng, items: &[T]) -> T {
    items[r.random_range(0..items.len())]
}

impl GradcheckCase {
    /// Random shapes up to 8 wide. Decoders carry dropout 0.5 and are
    /// evaluated in evaluation mode on even seeds; odd seeds use training
    /// mode with fixed masks.
    pub fn generate(seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0x6c]);
        let input_dim = r.random_range(1..=8);
        let depth = r.random_range(0..=2);
        let hidden_layers = (0..depth)
            .map(|_| LayerSpec {
                units: r.random_range(1..=8),
                activation: pick(&mut r, &[Activation::Tanh, Activation::Relu]),
            })
            .collect();
        let mode = if seed.is_multiple_of(2) { Mode::Eval } else { Mode::Train };
        let spec = ModelSpec {
            input_dim,
            hidden_layers,
            embedding_dim: r.random_range(1..=8),
            embedding_activation: pick(&mut r, &[Activation::Tanh, Activation::Relu, Activation::Identity]),
            internal_dropout: if mode == Mode::Train { 0.3 } else { 0.0 },
        };
        let mut model = UnderlyingModel::new(spec.clone(), r.random()).unwrap();
        // Zero biases put dead ReLU units exactly on the kink.
        for layer in &mut model.layers {
            for b in layer.bias.values_mut() {
                *b = Distribution::<f64>::sample(&StandardNormal, &mut r);
            }
        }
        let tasks = r.random_range(1..=2);
        let d = r.random_range(1..=3);
        let mut batches = Vec::new();
        let mut heads = Vec::new();
        for t in 0..tasks {
            let kind = pick(&mut r, &[LossKind::Mse, LossKind::CrossEntropy]);
            let c = match kind {
                LossKind::Mse => r.random_range(1..=4),
                LossKind::CrossEntropy => r.random_range(2..=5),
            };
            let n = r.random_range(1..=8);
            let mut head = TaskHead::new(t, d, spec.embedding_dim, c, kind).unwrap();
            for dec in &mut head.decoders {
                for v in dec.weights.values_mut().iter_mut().chain(dec.bias.values_mut()) {
                    *v = Distribution::<f64>::sample(&StandardNormal, &mut r);
                }
                dec.dropout_rate = 0.5;
            }
            heads.push(head);
            let mut gauss = |len| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut r)).collect() };
            let features = Tensor::from_vec(vec![n, input_dim], gauss(n * input_dim)).unwrap();
            let labels = match kind {
                LossKind::Mse => Labels::Regression(Tensor::from_vec(vec![n, c], gauss(n * c)).unwrap()),
                LossKind::CrossEntropy => Labels::Classes {
                    labels: (0..n).map(|_| r.random_range(0..c)).collect(),
                    num_classes: c,
                },
            };
            batches.push(Batch { features, labels });
        }
        let opts = LossOptions {
            independent_dropout: r.random(),
            reduction: pick(&mut r, &[DecoderReduction::Mean, DecoderReduction::Sum]),
            mode,
            mask_seed: r.random(),
        };
        Self {
            joint: JointModel::single(model, heads),
            batches,
            opts,
        }
    }
}

fn for_each_param(joint: &mut JointModel, mut f: impl FnMut(&mut Tensor)) {
    for m in &mut joint.models {
        m.params_mut().for_each(&mut f);
    }
    for h in &mut joint.heads {
        for d in &mut h.decoders {
            f(&mut d.weights);
            f(&mut d.bias);
        }
    }
}

fn flat_grads(joint: &mut JointModel) -> Vec<f64> {
    let mut out = Vec::new();
    for_each_param(joint, |t| out.extend_from_slice(t.grad()));
    out
}

fn set_param(joint: &mut JointModel, index: usize, value: f64) -> f64 {
    let mut seen = 0;
    let mut old = f64::NAN;
    for_each_param(joint, |t| {
        if index >= seen && index < seen + t.len() {
            let slot = &mut t.values_mut()[index - seen];
            old = *slot;
            *slot = value;
        }
        seen += t.len();
    });
    old
}

/// Analytic gradient of the joint loss w.r.t. every parameter, flattened.
pub fn analytic_gradient(case: &GradcheckCase) -> Result<Vec<f64>> {
    let mut joint = case.joint.clone();
    joint.zero_grad();
    let mut lg = pta_loss(&joint, &case.batches, &case.opts)?;
    accumulate_gradients(&mut joint, &mut lg)?;
    Ok(flat_grads(&mut joint))
}

/// Central differences with step `h` for every parameter.
pub fn numeric_gradient(case: &GradcheckCase, h: f64) -> Result<Vec<f64>> {
    let mut joint = case.joint.clone();
    let n = flat_grads(&mut joint).len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x = set_param(&mut joint, i, 0.0);
        set_param(&mut joint, i, x + h);
        let plus = pta_loss(&joint, &case.batches, &case.opts)?.value();
        set_param(&mut joint, i, x - h);
        let minus = pta_loss(&joint, &case.batches, &case.opts)?.value();
        set_param(&mut joint, i, x);
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// `|a - n| / max(|a|, |n|, MAGNITUDE_FLOOR)`.
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckResult {
    pub seed: u64,
    pub parameters: usize,
    pub max_error: f64,
    pub passed: bool,
}

pub fn check_case(seed: u64) -> Result<GradcheckResult> {
    let case = GradcheckCase::generate(seed);
    let a = analytic_gradient(&case)?;
    let n = numeric_gradient(&case, STEP)?;
    let max_error = a
        .iter()
        .zip(&n)
        .map(|(&x, &y)| gradient_error(x, y))
        .fold(0.0, f64::max);
    Ok(GradcheckResult {
        seed,
        parameters: a.len(),
        max_error,
        passed: max_error <= RELATIVE_TOLERANCE,
    })
}

/// `count` cases with seeds derived from `seed`.
pub fn run_suite(seed: u64, count: usize) -> Result<Vec<GradcheckResult>> {
    (0..count)
        .map(|i| check_case(rng::derive_seed(seed, &[i as u64])))
        .collect()
}
