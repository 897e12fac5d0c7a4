//! Executable checks of the training-dynamics results for linear decoders.
//!
//! * Non-simulability: with fixed decoders `w_1..w_D`, squared error, and an
//!   identity Jacobian, a single decoder `w_o` at rate `gamma` can only
//!   reproduce the multi-decoder update if the ratio
//!   `S^i / S^j` with `S = sum_d (y - w_d . F_k) w_d` is the same at every
//!   point `F_k`. [`check_nonsimulability`] compares those ratios with exact
//!   rational cross-multiplication.
//! * Duplication: `D` copies of `w_o` trained at `gamma / D` reproduce one
//!   decoder at `gamma` (summed decoder losses).
//! * Ensemble collapse: training the decoder-averaged prediction is the same
//!   as training one decoder with the averaged weights.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Labels};
use crate::error::{PtaError, Result};
use crate::graph::{Graph, Mode};
use crate::model::{Activation, Decoder, LayerSpec, LossKind, ModelSpec, TaskHead, UnderlyingModel};
use crate::rng;
use crate::tensor::Tensor;
use crate::training::{
    accumulate_gradients, pta_loss, DecoderReduction, JointModel, JointOptimizer, LossOptions,
    OptimizerConfig,
};

pub const EQUIVALENCE_TOLERANCE: f64 = 1e-10;
pub const CONTRAST_THRESHOLD: f64 = 1e-3;

/// Single-sample, scalar-target instance with bias-free linear decoders
/// evaluated at several embedding points, in exact arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessInstance {
    pub y: BigRational,
    pub decoders: Vec<Vec<BigRational>>,
    pub points: Vec<Vec<BigRational>>,
    pub alpha: BigRational,
}

fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

fn exact(v: f64) -> Result<BigRational> {
    BigRational::from_float(v).ok_or_else(|| PtaError::validation(format!("non-finite value {v}")))
}

impl WitnessInstance {
    pub fn from_integers(y: i64, decoders: &[Vec<i64>], points: &[Vec<i64>], alpha: i64) -> Result<Self> {
        let conv = |v: &[Vec<i64>]| v.iter().map(|r| r.iter().map(|&x| int(x)).collect()).collect();
        let inst = Self {
            y: int(y),
            decoders: conv(decoders),
            points: conv(points),
            alpha: int(alpha),
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Every `f64` is converted exactly.
    pub fn from_f64(y: f64, decoders: &[Vec<f64>], points: &[Vec<f64>], alpha: f64) -> Result<Self> {
        let conv = |v: &[Vec<f64>]| -> Result<Vec<Vec<BigRational>>> {
            v.iter().map(|r| r.iter().map(|&x| exact(x)).collect()).collect()
        };
        let inst = Self {
            y: exact(y)?,
            decoders: conv(decoders)?,
            points: conv(points)?,
            alpha: exact(alpha)?,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// `y = 1`, `w_1 = <2,3>`, `w_2 = <4,5>`, `F_1 = <6,7>`, `F_2 = <8,9>`.
    pub fn reference() -> Self {
        Self::from_integers(1, &[vec![2, 3], vec![4, 5]], &[vec![6, 7], vec![8, 9]], 1).unwrap()
    }

    pub fn embedding_dim(&self) -> usize {
        self.decoders.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.embedding_dim();
        if self.decoders.is_empty() {
            return Err(PtaError::validation("need at least one decoder"));
        }
        if m < 2 {
            return Err(PtaError::validation("embedding dimension must be >= 2"));
        }
        if self.points.len() < 2 {
            return Err(PtaError::validation("need at least two evaluation points"));
        }
        if self.decoders.iter().chain(&self.points).any(|v| v.len() != m) {
            return Err(PtaError::validation("decoders and points must share one dimension"));
        }
        if !self.alpha.is_positive() {
            return Err(PtaError::validation("learning rate must be > 0"));
        }
        Ok(())
    }

    /// `sum_d (y - w_d . F_k) w_d`.
    pub fn residual_sum(&self, k: usize) -> Vec<BigRational> {
        let f = &self.points[k];
        let mut out = vec![BigRational::zero(); self.embedding_dim()];
        for w in &self.decoders {
            let dot: BigRational = w.iter().zip(f).map(|(a, b)| a * b).sum();
            let r = &self.y - dot;
            for (o, wi) in out.iter_mut().zip(w) {
                *o += &r * wi;
            }
        }
        out
    }

    /// Scales `y` and every point by `c`.
    pub fn rescaled(&self, c: &BigRational) -> Self {
        Self {
            y: &self.y * c,
            decoders: self.decoders.clone(),
            points: self.points.iter().map(|p| p.iter().map(|x| x * c).collect()).collect(),
            alpha: self.alpha.clone(),
        }
    }
}

/// `sum_d 2 (y - w_d . F_k) w_d`: the parameter update at point `k` divided
/// by `alpha`, with the Jacobian of `F` taken as the identity.
pub fn pseudo_gradient_sum(inst: &WitnessInstance, k: usize) -> Vec<BigRational> {
    let two = int(2);
    inst.residual_sum(k).into_iter().map(|s| s * &two).collect()
}

pub fn pseudo_gradient_sum_f64(inst: &WitnessInstance, k: usize) -> Vec<f64> {
    use num_traits::ToPrimitive;
    pseudo_gradient_sum(inst, k).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Verdict {
    /// No single decoder reproduces the updates.
    NonSimulable,
    /// The ratio test finds no contradiction.
    SimulableConsistent,
    /// Some coordinate of the residual sum is zero.
    Inadmissible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonSimulabilityReport {
    pub verdict: Verdict,
    /// Coordinates `(i, j)` whose ratio was compared.
    pub coordinates: (usize, usize),
    /// Points `(1, k)` whose ratios differ, when non-simulable.
    pub points: Option<(usize, usize)>,
    /// `S_1^i * S_k^j` as an exact decimal or fraction string.
    pub lhs: Option<String>,
    /// `S_k^i * S_1^j`.
    pub rhs: Option<String>,
    /// Residual sums `S_k` for every point.
    pub residual_sums: Vec<Vec<String>>,
    pub reason: Option<String>,
}

/// Ratio test on coordinates `(0, 1)`: compares `S_1^0 / S_1^1` with
/// `S_k^0 / S_k^1` for every other point by cross-multiplication.
pub fn check_nonsimulability(inst: &WitnessInstance) -> Result<NonSimulabilityReport> {
    inst.validate()?;
    let sums: Vec<Vec<BigRational>> = (0..inst.points.len()).map(|k| inst.residual_sum(k)).collect();
    let mut report = NonSimulabilityReport {
        verdict: Verdict::SimulableConsistent,
        coordinates: (0, 1),
        points: None,
        lhs: None,
        rhs: None,
        residual_sums: sums.iter().map(|s| s.iter().map(|v| v.to_string()).collect()).collect(),
        reason: None,
    };
    if let Some((k, i)) = sums
        .iter()
        .enumerate()
        .find_map(|(k, s)| s.iter().position(Zero::is_zero).map(|i| (k, i)))
    {
        report.verdict = Verdict::Inadmissible;
        report.reason = Some(format!("residual sum is zero at point {k}, coordinate {i}"));
        return Ok(report);
    }
    let (i, j) = report.coordinates;
    for k in 1..sums.len() {
        let lhs = &sums[0][i] * &sums[k][j];
        let rhs = &sums[k][i] * &sums[0][j];
        if lhs != rhs {
            report.verdict = Verdict::NonSimulable;
            report.points = Some((0, k));
            report.lhs = Some(lhs.to_string());
            report.rhs = Some(rhs.to_string());
            break;
        }
    }
    Ok(report)
}

/// A randomized model, decoder set, and batch for the floating-point checks.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub model: UnderlyingModel,
    pub decoders: Vec<Decoder>,
    pub batch: Batch,
    pub loss_kind: LossKind,
}

impl RandomInstance {
    /// Two-layer tanh model, `num_decoders` Gaussian decoders with zero
    /// dropout, batch of 1-5 samples; MSE or cross-entropy by seed.
    pub fn generate(seed: u64, num_decoders: usize) -> Self {
        let mut r = rng::stream(seed, &[0x7e0]);
        let input_dim = r.random_range(2..=6);
        let hidden = r.random_range(2..=8);
        let m = r.random_range(2..=6);
        let c = r.random_range(1..=3);
        let n = r.random_range(1..=5);
        let spec = ModelSpec {
            input_dim,
            hidden_layers: vec![LayerSpec {
                units: hidden,
                activation: Activation::Tanh,
            }],
            embedding_dim: m,
            embedding_activation: Activation::Tanh,
            internal_dropout: 0.0,
        };
        let mut model = UnderlyingModel::new(spec, r.random()).unwrap();
        for p in model.params_mut() {
            for v in p.values_mut() {
                *v = StandardNormal.sample(&mut r);
            }
        }
        let mut gauss = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut r)).collect() };
        let decoders = (0..num_decoders)
            .map(|_| Decoder {
                weights: Tensor::from_vec(vec![m, c], gauss(m * c)).unwrap(),
                bias: Tensor::from_vec(vec![c], gauss(c)).unwrap(),
                ..Decoder::zeros(m, c)
            })
            .collect();
        let features = Tensor::from_vec(vec![n, input_dim], gauss(n * input_dim)).unwrap();
        let (labels, loss_kind) = if seed.is_multiple_of(2) || c == 1 {
            (
                Labels::Regression(Tensor::from_vec(vec![n, c], gauss(n * c)).unwrap()),
                LossKind::Mse,
            )
        } else {
            let labels = (0..n).map(|_| r.random_range(0..c)).collect();
            (Labels::Classes { labels, num_classes: c }, LossKind::CrossEntropy)
        };
        Self {
            model,
            decoders,
            batch: Batch { features, labels },
            loss_kind,
        }
    }

    fn joint(&self, decoders: Vec<Decoder>) -> JointModel {
        let m = self.model.embedding_dim();
        let c = decoders[0].bias.len();
        let mut head = TaskHead::new(0, decoders.len(), m, c, self.loss_kind).unwrap();
        head.decoders = decoders;
        JointModel::single(self.model.clone(), vec![head])
    }
}

/// `max |a - b| / max |b|`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCheck {
    pub relative_error: f64,
    pub passed: bool,
}

fn model_update(inst: &RandomInstance, decoders: Vec<Decoder>, lr: f64) -> Result<Vec<f64>> {
    let mut joint = inst.joint(decoders);
    let before = joint.models[0].flat_params();
    let mut opt = JointOptimizer::new(&joint, OptimizerConfig::sgd(lr));
    joint.zero_grad();
    let opts = LossOptions {
        reduction: DecoderReduction::Sum,
        mode: Mode::Eval,
        ..Default::default()
    };
    let mut lg = pta_loss(&joint, std::slice::from_ref(&inst.batch), &opts)?;
    accumulate_gradients(&mut joint, &mut lg)?;
    opt.step(&mut joint);
    Ok(joint.models[0]
        .flat_params()
        .iter()
        .zip(before)
        .map(|(a, b)| a - b)
        .collect())
}

/// Compares the model update of `copies` duplicates of `w_o` at rate
/// `gamma / copies` with the single-decoder update at rate `gamma`.
/// `offset` is added to every weight of the last duplicate (sensitivity probe).
pub fn verify_simulation_by_duplication(
    inst: &RandomInstance,
    w_o: &Decoder,
    gamma: f64,
    copies: usize,
    offset: f64,
) -> Result<EquivalenceCheck> {
    if copies == 0 {
        return Err(PtaError::validation("need at least one copy"));
    }
    let single = model_update(inst, vec![w_o.clone()], gamma)?;
    let mut dups = vec![w_o.clone(); copies];
    dups.last_mut()
        .unwrap()
        .weights
        .values_mut()
        .iter_mut()
        .for_each(|w| *w += offset);
    let multi = model_update(inst, dups, gamma / copies as f64)?;
    let relative_error = relative_error(&multi, &single);
    Ok(EquivalenceCheck {
        relative_error,
        passed: relative_error <= EQUIVALENCE_TOLERANCE,
    })
}

fn model_grad(joint: &mut JointModel) -> Vec<f64> {
    joint.models[0]
        .params()
        .flat_map(|p| p.grad().iter().copied())
        .collect()
}

/// Model gradient of the loss of the decoder-averaged prediction.
pub fn ensemble_model_gradient(inst: &RandomInstance, decoders: &[Decoder]) -> Result<Vec<f64>> {
    let mut joint = inst.joint(decoders.to_vec());
    joint.zero_grad();
    let mut g = Graph::new();
    let x = g.leaf(&inst.batch.features);
    let (emb, mb) = joint.models[0].embed(&mut g, x, Mode::Eval, 0)?;
    let outs = (0..decoders.len())
        .map(|d| joint.heads[0].decode(&mut g, emb, d, Mode::Eval, 0, false).map(|o| o.0))
        .collect::<Result<Vec<_>>>()?;
    let avg = g.mean(&outs)?;
    let loss = match &inst.batch.labels {
        Labels::Regression(t) => g.mse_loss(avg, t)?,
        Labels::Classes { labels, .. } => g.softmax_cross_entropy(avg, labels)?,
    };
    g.backward(loss)?;
    joint.models[0].absorb_grads(&g, &mb);
    Ok(model_grad(&mut joint))
}

/// Model gradient of the mean-over-decoders loss.
pub fn pta_model_gradient(inst: &RandomInstance, decoders: &[Decoder]) -> Result<Vec<f64>> {
    let mut joint = inst.joint(decoders.to_vec());
    joint.zero_grad();
    let opts = LossOptions {
        mode: Mode::Eval,
        ..Default::default()
    };
    let mut lg = pta_loss(&joint, std::slice::from_ref(&inst.batch), &opts)?;
    accumulate_gradients(&mut joint, &mut lg)?;
    Ok(model_grad(&mut joint))
}

pub fn mean_decoder(decoders: &[Decoder]) -> Decoder {
    let k = decoders.len() as f64;
    let mut out = decoders[0].clone();
    for (i, w) in out.weights.values_mut().iter_mut().enumerate() {
        *w = decoders.iter().map(|d| d.weights.values()[i]).sum::<f64>() / k;
    }
    for (i, b) in out.bias.values_mut().iter_mut().enumerate() {
        *b = decoders.iter().map(|d| d.bias.values()[i]).sum::<f64>() / k;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCheck {
    /// Ensemble objective vs single mean-weight decoder.
    pub ensemble_relative_error: f64,
    /// Mean-over-decoders objective vs single mean-weight decoder.
    pub pta_relative_error: f64,
    pub collapse_holds: bool,
    pub pta_differs: bool,
}

pub fn verify_ensemble_collapse(inst: &RandomInstance) -> Result<EnsembleCheck> {
    let mean = mean_decoder(&inst.decoders);
    let single = ensemble_model_gradient(inst, std::slice::from_ref(&mean))?;
    let ens = ensemble_model_gradient(inst, &inst.decoders)?;
    let pta = pta_model_gradient(inst, &inst.decoders)?;
    let ensemble_relative_error = relative_error(&ens, &single);
    let pta_relative_error = relative_error(&pta, &single);
    Ok(EnsembleCheck {
        ensemble_relative_error,
        pta_relative_error,
        collapse_holds: ensemble_relative_error <= EQUIVALENCE_TOLERANCE,
        pta_differs: pta_relative_error > CONTRAST_THRESHOLD,
    })
}

/// Random integer witness with `D >= 2` decoders.
pub fn random_witness(seed: u64) -> WitnessInstance {
    let mut r = rng::stream(seed, &[0x9e7]);
    let d = r.random_range(2..=4);
    let m = r.random_range(2..=4);
    let k = r.random_range(2..=3);
    let mut vec = |len: usize| -> Vec<i64> { (0..len).map(|_| r.random_range(-50..=50)).collect() };
    let decoders: Vec<Vec<i64>> = (0..d).map(|_| vec(m)).collect();
    let points: Vec<Vec<i64>> = (0..k).map(|_| vec(m)).collect();
    let y = vec(1)[0];
    WitnessInstance::from_integers(y, &decoders, &points, 1).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub witness: NonSimulabilityReport,
    pub witness_passed: bool,
    pub duplication_instances: usize,
    pub duplication_max_relative_error: f64,
    pub duplication_passed: bool,
    pub ensemble_instances: usize,
    pub ensemble_max_relative_error: f64,
    pub ensemble_contrast_count: usize,
    pub ensemble_passed: bool,
    pub genericity_samples: usize,
    pub genericity_non_simulable: usize,
    pub genericity_passed: bool,
    pub passed: bool,
}

/// Runs every theory check with seeds derived from `seed`.
pub fn full_report(seed: u64, instances: usize) -> Result<TheoryReport> {
    let witness = check_nonsimulability(&WitnessInstance::reference())?;
    let witness_passed = witness.verdict == Verdict::NonSimulable
        && witness.lhs.as_deref() == Some("149776")
        && witness.rhs.as_deref() == Some("149768");

    let mut dup_max: f64 = 0.0;
    for i in 0..instances {
        let s = rng::derive_seed(seed, &[1, i as u64]);
        let copies = 2 + (i % 7);
        let inst = RandomInstance::generate(s, 1);
        let gamma = 0.01 + (s % 100) as f64 * 1e-3;
        let check = verify_simulation_by_duplication(&inst, &inst.decoders[0], gamma, copies, 0.0)?;
        dup_max = dup_max.max(check.relative_error);
    }

    let mut ens_max: f64 = 0.0;
    let mut contrast = 0;
    for i in 0..instances {
        let s = rng::derive_seed(seed, &[2, i as u64]);
        let inst = RandomInstance::generate(s, 2 + i % 4);
        let check = verify_ensemble_collapse(&inst)?;
        ens_max = ens_max.max(check.ensemble_relative_error);
        contrast += check.pta_differs as usize;
    }

    let samples = 1000;
    let mut non_sim = 0;
    for i in 0..samples {
        let w = random_witness(rng::derive_seed(seed, &[3, i as u64]));
        non_sim += (check_nonsimulability(&w)?.verdict == Verdict::NonSimulable) as usize;
    }

    let duplication_passed = dup_max <= EQUIVALENCE_TOLERANCE;
    let ensemble_passed = ens_max <= EQUIVALENCE_TOLERANCE && contrast * 100 >= 95 * instances;
    let genericity_passed = non_sim * 100 > 99 * samples;
    Ok(TheoryReport {
        passed: witness_passed && duplication_passed && ensemble_passed && genericity_passed,
        witness,
        witness_passed,
        duplication_instances: instances,
        duplication_max_relative_error: dup_max,
        duplication_passed,
        ensemble_instances: instances,
        ensemble_max_relative_error: ens_max,
        ensemble_contrast_count: contrast,
        ensemble_passed,
        genericity_samples: samples,
        genericity_non_simulable: non_sim,
        genericity_passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn witness_pseudo_gradients() {
        let w = WitnessInstance::reference();
        assert_eq!(pseudo_gradient_sum(&w, 0), vec![int(-592), int(-772)]);
        assert_eq!(pseudo_gradient_sum(&w, 1), vec![int(2 * -388), int(2 * -506)]);
        assert_eq!(pseudo_gradient_sum_f64(&w, 0), vec![-592.0, -772.0]);
    }

    #[test]
    fn zero_residual_gives_zero_vector() {
        // y = w . F = 2*1 + 3*1 = 5
        let w = WitnessInstance::from_integers(5, &[vec![2, 3]], &[vec![1, 1], vec![2, 2]], 1).unwrap();
        assert!(pseudo_gradient_sum(&w, 0).iter().all(Zero::is_zero));
    }

    #[test]
    fn reference_witness_is_non_simulable() {
        let r = check_nonsimulability(&WitnessInstance::reference()).unwrap();
        assert_eq!(r.verdict, Verdict::NonSimulable);
        assert_eq!(r.lhs.as_deref(), Some("149776"));
        assert_eq!(r.rhs.as_deref(), Some("149768"));
        assert_eq!(r.residual_sums, vec![vec!["-296", "-386"], vec!["-388", "-506"]]);
    }

    #[test]
    fn identical_and_single_decoders_are_consistent() {
        let same = WitnessInstance::from_integers(1, &[vec![2, 3], vec![2, 3]], &[vec![6, 7], vec![8, 9]], 1)
            .unwrap();
        assert_eq!(check_nonsimulability(&same).unwrap().verdict, Verdict::SimulableConsistent);
        let one = WitnessInstance::from_integers(1, &[vec![4, 5]], &[vec![6, 7], vec![8, 9], vec![-1, 3]], 1)
            .unwrap();
        assert_eq!(check_nonsimulability(&one).unwrap().verdict, Verdict::SimulableConsistent);
    }

    #[test]
    fn zero_denominator_is_inadmissible() {
        let w = WitnessInstance::from_integers(5, &[vec![2, 3]], &[vec![1, 1], vec![2, 2]], 1).unwrap();
        assert_eq!(check_nonsimulability(&w).unwrap().verdict, Verdict::Inadmissible);
        let w = WitnessInstance::from_integers(1, &[vec![2, 0]], &[vec![1, 1], vec![2, 2]], 1).unwrap();
        assert_eq!(check_nonsimulability(&w).unwrap().verdict, Verdict::Inadmissible);
    }

    #[test]
    fn invalid_instances_rejected() {
        assert!(WitnessInstance::from_integers(1, &[vec![2]], &[vec![1], vec![2]], 1).is_err());
        assert!(WitnessInstance::from_integers(1, &[vec![2, 3]], &[vec![1, 1]], 1).is_err());
        assert!(WitnessInstance::from_integers(1, &[vec![2, 3]], &[vec![1, 1], vec![1, 2]], 0).is_err());
        assert!(WitnessInstance::from_f64(f64::NAN, &[vec![2.0, 3.0]], &[vec![1.0, 1.0], vec![1.0, 2.0]], 1.0)
            .is_err());
    }

    #[test]
    fn float_instances_are_exact() {
        let w = WitnessInstance::from_f64(1.0, &[vec![2.0, 3.0], vec![4.0, 5.0]], &[vec![6.0, 7.0], vec![8.0, 9.0]], 0.5)
            .unwrap();
        let r = check_nonsimulability(&w).unwrap();
        assert_eq!(r.lhs.as_deref(), Some("149776"));
    }

    #[test]
    fn joint_rescaling_keeps_verdict() {
        for s in 0..50 {
            let w = random_witness(s);
            let v = check_nonsimulability(&w).unwrap().verdict;
            for c in [int(3), BigRational::new(BigInt::from(7), BigInt::from(2))] {
                assert_eq!(check_nonsimulability(&w.rescaled(&c)).unwrap().verdict, v);
            }
        }
    }

    #[test]
    fn duplication_single_copy_is_exact() {
        let inst = RandomInstance::generate(3, 1);
        let c = verify_simulation_by_duplication(&inst, &inst.decoders[0], 0.1, 1, 0.0).unwrap();
        assert_eq!(c.relative_error, 0.0);
    }

    #[test]
    fn duplication_seven_copies() {
        let inst = RandomInstance::generate(11, 1);
        let c = verify_simulation_by_duplication(&inst, &inst.decoders[0], 0.05, 7, 0.0).unwrap();
        assert!(c.passed, "{c:?}");
    }

    #[test]
    fn perturbed_duplicate_breaks_equality() {
        let inst = RandomInstance::generate(11, 1);
        let c = verify_simulation_by_duplication(&inst, &inst.decoders[0], 0.05, 7, 1e-3).unwrap();
        assert!(!c.passed && c.relative_error > 1e-8, "{c:?}");
    }

    #[test]
    fn ensemble_of_one_is_identical() {
        let inst = RandomInstance::generate(5, 1);
        let c = verify_ensemble_collapse(&inst).unwrap();
        assert_eq!(c.ensemble_relative_error, 0.0);
        assert_eq!(c.pta_relative_error, 0.0);
    }

    #[test]
    fn ensemble_of_three_collapses_but_pta_does_not() {
        let mut inst = RandomInstance::generate(8, 3);
        inst.batch = Batch {
            features: Tensor::from_vec(
                vec![4, inst.model.spec.input_dim],
                (0..4 * inst.model.spec.input_dim).map(|i| (i as f64 * 0.37).sin()).collect(),
            )
            .unwrap(),
            labels: Labels::Regression(Tensor::from_vec(
                vec![4, inst.decoders[0].bias.len()],
                (0..4 * inst.decoders[0].bias.len()).map(|i| (i as f64).cos()).collect(),
            )
            .unwrap()),
        };
        inst.loss_kind = LossKind::Mse;
        let c = verify_ensemble_collapse(&inst).unwrap();
        assert!(c.collapse_holds && c.pta_differs, "{c:?}");
    }
}
