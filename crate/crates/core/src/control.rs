//! Decoder-control policies: the hooks run once before training
//! ([`dec_initialize`]) and after every meta-iteration ([`dec_update`]).
//!
//! Six primitives compose freely:
//!
//! | flag | hook       | effect                                                     |
//! |------|------------|------------------------------------------------------------|
//! | I    | initialize | independent random init of every decoder (always on)       |
//! | F    | initialize | freeze every decoder except the first of each task         |
//! | D    | initialize | per-decoder dropout masks instead of one shared mask       |
//! | G    | update     | copy the best decoder (weights, bias, rate) over the rest  |
//! | H    | update     | Gaussian noise on non-best dropout rates, then clamp       |
//! | P    | update     | Gaussian noise on non-best weights and biases              |
//!
//! Updates apply in the order G, H, P.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PtaError, Result};
use crate::model::TaskHead;
use crate::rng;

pub const DEFAULT_PERTURB_VARIANCE: f64 = 0.01;
pub const DEFAULT_HYPERPERTURB_VARIANCE: f64 = 0.1;
pub const DEFAULT_RATE_CLAMP: (f64, f64) = (0.2, 0.8);
pub const DEFAULT_INITIAL_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFlags {
    #[serde(default)]
    pub freeze: bool,
    #[serde(default)]
    pub independent_dropout: bool,
    #[serde(default)]
    pub perturb: bool,
    #[serde(default)]
    pub hyperperturb: bool,
    #[serde(default)]
    pub greedy: bool,
}

/// The eight named combinations.
pub const NAMED_POLICIES: [&str; 8] = [
    "PTA-I", "PTA-F", "PTA-P", "PTA-D", "PTA-FP", "PTA-GP", "PTA-GD", "PTA-HGD",
];

impl PolicyFlags {
    pub fn letters(&self) -> String {
        let mut s = String::from("I");
        for (on, c) in [
            (self.hyperperturb, 'H'),
            (self.greedy, 'G'),
            (self.freeze, 'F'),
            (self.perturb, 'P'),
            (self.independent_dropout, 'D'),
        ] {
            if on {
                s.push(c);
            }
        }
        s
    }

    /// `PTA-` name: the conventional letter order for the named variants
    /// (`PTA-HGD`, `PTA-FP`, ...), `PTA-I` for the bare policy.
    pub fn name(&self) -> String {
        let letters = self.letters();
        if letters == "I" {
            "PTA-I".to_string()
        } else {
            format!("PTA-{}", &letters[1..])
        }
    }
}

impl FromStr for PolicyFlags {
    type Err = PtaError;

    /// Accepts `PTA-XYZ` (case-insensitive, prefix optional) with letters
    /// from `IFDPHG`.
    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        let body = upper.strip_prefix("PTA-").unwrap_or(&upper);
        if body.is_empty() {
            return Err(PtaError::validation(format!("empty policy name {s:?}")));
        }
        let mut f = PolicyFlags::default();
        for c in body.chars() {
            let slot = match c {
                'I' => continue,
                'F' => &mut f.freeze,
                'D' => &mut f.independent_dropout,
                'P' => &mut f.perturb,
                'H' => &mut f.hyperperturb,
                'G' => &mut f.greedy,
                _ => {
                    return Err(PtaError::validation(format!(
                        "unknown control letter {c:?} in policy {s:?}"
                    )))
                }
            };
            if *slot {
                return Err(PtaError::validation(format!("repeated letter {c:?} in {s:?}")));
            }
            *slot = true;
        }
        Ok(f)
    }
}

impl fmt::Display for PolicyFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPolicy {
    pub flags: PolicyFlags,
    /// Variance of the weight noise added by Perturb.
    #[serde(default = "default_perturb_variance")]
    pub perturb_variance: f64,
    /// Variance of the dropout-rate noise added by Hyperperturb.
    #[serde(default = "default_hyperperturb_variance")]
    pub hyperperturb_variance: f64,
    #[serde(default = "default_rate_clamp")]
    pub rate_clamp: (f64, f64),
    #[serde(default = "default_initial_dropout")]
    pub initial_dropout: f64,
}

fn default_perturb_variance() -> f64 {
    DEFAULT_PERTURB_VARIANCE
}
fn default_hyperperturb_variance() -> f64 {
    DEFAULT_HYPERPERTURB_VARIANCE
}
fn default_rate_clamp() -> (f64, f64) {
    DEFAULT_RATE_CLAMP
}
fn default_initial_dropout() -> f64 {
    DEFAULT_INITIAL_DROPOUT
}

impl ControlPolicy {
    pub fn new(flags: PolicyFlags) -> Self {
        Self {
            flags,
            perturb_variance: DEFAULT_PERTURB_VARIANCE,
            hyperperturb_variance: DEFAULT_HYPERPERTURB_VARIANCE,
            rate_clamp: DEFAULT_RATE_CLAMP,
            initial_dropout: DEFAULT_INITIAL_DROPOUT,
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn name(&self) -> String {
        self.flags.name()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.rate_clamp;
        if !(0.0 <= lo && lo < hi && hi < 1.0) {
            return Err(PtaError::validation(format!(
                "rate clamp [{lo}, {hi}] must satisfy 0 <= lo < hi < 1"
            )));
        }
        if !(0.0..1.0).contains(&self.initial_dropout) {
            return Err(PtaError::validation("initial dropout must lie in [0, 1)"));
        }
        if !(self.perturb_variance >= 0.0 && self.hyperperturb_variance >= 0.0) {
            return Err(PtaError::validation("noise variances must be >= 0"));
        }
        Ok(())
    }
}

/// Independent seeded init of every decoder, uniform in `±1/sqrt(M)`, zero
/// bias. Sets dropout rates, freeze flags, and resets costs to `+inf`.
pub fn dec_initialize(policy: &ControlPolicy, heads: &mut [TaskHead], seed: u64) {
    for head in heads.iter_mut() {
        let t = head.task_id as u64;
        for (d, dec) in head.decoders.iter_mut().enumerate() {
            let m = dec.weights.shape()[0];
            let limit = 1.0 / (m as f64).sqrt();
            let mut r = rng::stream(seed, &[rng::TAG_DECODER_INIT, t, d as u64]);
            for w in dec.weights.values_mut() {
                *w = r.random_range(-limit..=limit);
            }
            dec.bias.values_mut().fill(0.0);
            dec.zero_grad();
            dec.dropout_rate = policy.initial_dropout;
            dec.frozen = policy.flags.freeze && d > 0;
            dec.last_cost = f64::INFINITY;
        }
    }
}

/// Control rng for one task at one meta-iteration.
pub fn control_stream(seed: u64, task: usize, meta_iteration: usize) -> ChaCha8Rng {
    rng::stream(seed, &[rng::TAG_CONTROL, task as u64, meta_iteration as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub best: usize,
    pub copied: Vec<usize>,
    pub rate_perturbed: Vec<usize>,
    pub weight_perturbed: Vec<usize>,
}

/// Lowest-index argmin. NaN costs never win.
pub fn best_index(costs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (d, &c) in costs.iter().enumerate() {
        match best {
            _ if c.is_nan() => {}
            None => best = Some(d),
            Some(b) if c < costs[b] => best = Some(d),
            _ => {}
        }
    }
    best.or(if costs.is_empty() { None } else { Some(0) })
}

/// Non-gradient decoder update for one task given this meta-iteration's
/// costs. Records the costs on the decoders.
pub fn dec_update(
    policy: &ControlPolicy,
    head: &mut TaskHead,
    costs: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<UpdateReport> {
    if head.decoders.is_empty() {
        return Err(PtaError::Contract("dec_update on a task with no decoders".into()));
    }
    if costs.len() != head.decoders.len() {
        return Err(PtaError::Contract(format!(
            "{} costs for {} decoders",
            costs.len(),
            head.decoders.len()
        )));
    }
    for (dec, &c) in head.decoders.iter_mut().zip(costs) {
        dec.last_cost = c;
    }
    let best = best_index(costs).unwrap();
    let others: Vec<usize> = (0..costs.len()).filter(|&d| d != best).collect();
    // Noise spares every decoder tied with the minimum pre-copy cost.
    let c_min = costs[best];
    let noisy: Vec<usize> = (0..costs.len()).filter(|&d| costs[d] != c_min).collect();
    let mut report = UpdateReport {
        best,
        copied: vec![],
        rate_perturbed: vec![],
        weight_perturbed: vec![],
    };

    let flags = policy.flags;
    if flags.greedy {
        let source = head.decoders[best].clone();
        for &d in &others {
            let dec = &mut head.decoders[d];
            if dec.frozen {
                continue;
            }
            dec.weights.values_mut().copy_from_slice(source.weights.values());
            dec.bias.values_mut().copy_from_slice(source.bias.values());
            dec.dropout_rate = source.dropout_rate;
            report.copied.push(d);
        }
    }

    if flags.hyperperturb {
        let (lo, hi) = policy.rate_clamp;
        let noise = Normal::new(0.0, policy.hyperperturb_variance.sqrt()).unwrap();
        for &d in &noisy {
            let dec = &mut head.decoders[d];
            dec.dropout_rate = (dec.dropout_rate + noise.sample(rng)).clamp(lo, hi);
            report.rate_perturbed.push(d);
        }
    }

    if flags.perturb {
        let noise = Normal::new(0.0, policy.perturb_variance.sqrt()).unwrap();
        for &d in &noisy {
            let dec = &mut head.decoders[d];
            for w in dec
                .weights
                .values_mut()
                .iter_mut()
                .chain(dec.bias.values_mut().iter_mut())
            {
                *w += noise.sample(rng);
            }
            report.weight_perturbed.push(d);
        }
    }

    Ok(report)
}

/// Applies hyperperturb noise `delta` to `rate` and clamps.
pub fn perturb_rate(rate: f64, delta: f64, clamp: (f64, f64)) -> f64 {
    (rate + delta).clamp(clamp.0, clamp.1)
}
