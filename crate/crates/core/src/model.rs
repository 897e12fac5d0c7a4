//! The shared underlying model and the per-task decoder banks.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PtaError, Result};
use crate::graph::{Graph, Mode, NodeId};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
}

/// Architecture of the shared model: hidden layers followed by a projection
/// to the `embedding_dim`-wide embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_layers: Vec<LayerSpec>,
    pub embedding_dim: usize,
    #[serde(default = "default_embedding_activation")]
    pub embedding_activation: Activation,
    /// Dropout after every hidden activation (training mode only).
    #[serde(default)]
    pub internal_dropout: f64,
}

fn default_embedding_activation() -> Activation {
    Activation::Relu
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embedding_dim == 0 {
            return Err(PtaError::validation("model dimensions must be >= 1"));
        }
        if self.hidden_layers.iter().any(|l| l.units == 0) {
            return Err(PtaError::validation("hidden layer units must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.internal_dropout) {
            return Err(PtaError::validation(format!(
                "internal dropout rate {} outside [0, 1)",
                self.internal_dropout
            )));
        }
        Ok(())
    }

    fn layer_shapes(&self) -> Vec<(usize, usize, Activation)> {
        let mut shapes = Vec::new();
        let mut width = self.input_dim;
        for l in &self.hidden_layers {
            shapes.push((width, l.units, l.activation));
            width = l.units;
        }
        shapes.push((width, self.embedding_dim, self.embedding_activation));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// Node ids of one forward pass's parameter leaves, used to pull gradients
/// back out of the graph.
#[derive(Debug, Clone, Default)]
pub struct ModelBinding {
    params: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UnderlyingModel {
    pub spec: ModelSpec,
    pub layers: Vec<Dense>,
    #[serde(skip)]
    embed_calls: AtomicU64,
}

impl Clone for UnderlyingModel {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            embed_calls: AtomicU64::new(self.embed_calls()),
        }
    }
}

impl PartialEq for UnderlyingModel {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

impl UnderlyingModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::stream(seed, &[rng::TAG_MODEL_INIT]);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out, activation)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = (0..fan_in * fan_out)
                    .map(|_| r.random_range(-limit..=limit))
                    .collect();
                Dense {
                    weights: Tensor::from_vec(vec![fan_in, fan_out], w).unwrap(),
                    bias: Tensor::zeros(vec![fan_out]),
                    activation,
                }
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            embed_calls: AtomicU64::new(0),
        })
    }

    /// Model with explicitly supplied layers; shapes must chain.
    pub fn from_layers(spec: ModelSpec, layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(PtaError::validation("layer count does not match spec"));
        }
        for ((i, o, _), l) in shapes.iter().zip(&layers) {
            if l.weights.shape() != [*i, *o] || l.bias.shape() != [*o] {
                return Err(PtaError::Dimension {
                    op: "from_layers",
                    left: vec![*i, *o],
                    right: l.weights.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            spec,
            layers,
            embed_calls: AtomicU64::new(0),
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim
    }

    /// Number of [`embed`](Self::embed) evaluations since creation.
    pub fn embed_calls(&self) -> u64 {
        self.embed_calls.load(Ordering::Relaxed)
    }

    /// One forward pass through the model for a `batch x input_dim` input node.
    pub fn embed(
        &self,
        g: &mut Graph,
        x: NodeId,
        mode: Mode,
        mask_seed: u64,
    ) -> Result<(NodeId, ModelBinding)> {
        let (_, cols) = g.value(x).expect_dims2("embed")?;
        if cols != self.spec.input_dim {
            return Err(PtaError::validation(format!(
                "input has {cols} features, model expects {}",
                self.spec.input_dim
            )));
        }
        self.embed_calls.fetch_add(1, Ordering::Relaxed);

        let mut binding = ModelBinding::default();
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.leaf(&layer.weights);
            let b = g.leaf(&layer.bias);
            binding.params.push((w, b));
            let z = g.matmul(h, w)?;
            let z = g.add_bias(z, b)?;
            h = match layer.activation {
                Activation::Relu => g.relu(z),
                Activation::Tanh => g.tanh(z),
                Activation::Identity => z,
            };
            if i < last {
                let seed = rng::derive_seed(mask_seed, &[i as u64]);
                h = g.dropout(h, self.spec.internal_dropout, seed, mode)?;
            }
        }
        Ok((h, binding))
    }

    /// Evaluation-mode embedding of a plain tensor.
    pub fn embed_eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xn = g.leaf(x);
        let (e, _) = self.embed(&mut g, xn, Mode::Eval, 0)?;
        Ok(g.value(e).clone())
    }

    /// Adds the gradients recorded in `g` into this model's parameter grads.
    pub fn absorb_grads(&mut self, g: &Graph, binding: &ModelBinding) {
        for (layer, &(w, b)) in self.layers.iter_mut().zip(&binding.params) {
            layer.weights.accumulate_grad(g.grad(w));
            layer.bias.accumulate_grad(g.grad(b));
        }
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.weights.zero_grad();
            l.bias.zero_grad();
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    /// All parameters flattened in declaration order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().flat_map(|t| t.values().iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// One linear decoder `embedding (M) -> outputs (C)` with its preceding
/// dropout layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub weights: Tensor,
    pub bias: Tensor,
    pub dropout_rate: f64,
    pub frozen: bool,
    /// Cost from the latest evaluation; `+inf` until the first one.
    pub last_cost: f64,
}

impl Decoder {
    pub fn zeros(embedding_dim: usize, output_dim: usize) -> Self {
        Self {
            weights: Tensor::zeros(vec![embedding_dim, output_dim]),
            bias: Tensor::zeros(vec![output_dim]),
            dropout_rate: 0.0,
            frozen: false,
            last_cost: f64::INFINITY,
        }
    }

    /// Weights (row-major) followed by bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .values()
            .iter()
            .chain(self.bias.values())
            .copied()
            .collect()
    }

    /// Same weights, bias, and dropout rate, bit for bit.
    pub fn same_params(&self, other: &Decoder) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(self.weights.values()) == bits(other.weights.values())
            && bits(self.bias.values()) == bits(other.bias.values())
            && self.dropout_rate.to_bits() == other.dropout_rate.to_bits()
    }

    pub fn zero_grad(&mut self) {
        self.weights.zero_grad();
        self.bias.zero_grad();
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderBinding {
    pub weights: NodeId,
    pub bias: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHead {
    pub task_id: usize,
    pub output_dim: usize,
    pub loss_kind: LossKind,
    pub decoders: Vec<Decoder>,
}

impl TaskHead {
    /// `num_decoders` zero decoders; call a policy's initializer afterwards.
    pub fn new(
        task_id: usize,
        num_decoders: usize,
        embedding_dim: usize,
        output_dim: usize,
        loss_kind: LossKind,
    ) -> Result<Self> {
        if num_decoders == 0 {
            return Err(PtaError::validation("a task needs at least one decoder"));
        }
        if embedding_dim == 0 || output_dim == 0 {
            return Err(PtaError::validation("decoder dimensions must be >= 1"));
        }
        Ok(Self {
            task_id,
            output_dim,
            loss_kind,
            decoders: vec![Decoder::zeros(embedding_dim, output_dim); num_decoders],
        })
    }

    pub fn num_decoders(&self) -> usize {
        self.decoders.len()
    }

    /// Mask seed for decoder `d` given the task's shared seed for this batch.
    pub fn mask_seed(shared_mask_seed: u64, d: usize, independent_dropout: bool) -> u64 {
        if independent_dropout {
            rng::derive_seed(shared_mask_seed, &[d as u64])
        } else {
            shared_mask_seed
        }
    }

    /// Decoder `d` applied to an embedding node: dropout then affine map.
    pub fn decode(
        &self,
        g: &mut Graph,
        embedding: NodeId,
        d: usize,
        mode: Mode,
        shared_mask_seed: u64,
        independent_dropout: bool,
    ) -> Result<(NodeId, DecoderBinding)> {
        let dec = self.decoders.get(d).ok_or_else(|| {
            PtaError::validation(format!(
                "decoder index {d} out of range for {} decoders",
                self.decoders.len()
            ))
        })?;
        let seed = Self::mask_seed(shared_mask_seed, d, independent_dropout);
        let h = g.dropout(embedding, dec.dropout_rate, seed, mode)?;
        let w = g.leaf(&dec.weights);
        let b = g.leaf(&dec.bias);
        let z = g.matmul(h, w)?;
        let out = g.add_bias(z, b)?;
        Ok((out, DecoderBinding { weights: w, bias: b }))
    }

    pub fn absorb_grads(&mut self, g: &Graph, d: usize, binding: DecoderBinding) {
        let dec = &mut self.decoders[d];
        dec.weights.accumulate_grad(g.grad(binding.weights));
        dec.bias.accumulate_grad(g.grad(binding.bias));
    }

    pub fn snapshot_decoders(&self) -> Vec<PseudoTask> {
        self.decoders
            .iter()
            .enumerate()
            .map(|(d, dec)| PseudoTask {
                task_id: self.task_id,
                decoder_index: d,
                decoder: dec.clone(),
            })
            .collect()
    }
}

/// A decoder snapshot paired with the task whose data it is trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTask {
    pub task_id: usize,
    pub decoder_index: usize,
    pub decoder: Decoder,
}

impl PseudoTask {
    pub fn flatten(&self) -> Vec<f64> {
        self.decoder.flatten()
    }
}
