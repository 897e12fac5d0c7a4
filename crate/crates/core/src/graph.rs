//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each recorded node keeps its
//! operation tag, the ids of its inputs and its output tensor; inputs always
//! precede the node, so creation order is a topological order. [`Graph::backward`]
//! walks that order in reverse and adds `d loss / d node` into the gradient slot
//! of every reachable node tensor, so repeated calls accumulate.

use rand::Rng;

use crate::error::{PtaError, Result};
use crate::rng;
use crate::tensor::{matmul_a_bt, matmul_at_b, matmul_raw, Tensor};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sum(Vec<NodeId>),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    /// Elementwise multiply by a constant (already rescaled) dropout mask.
    Mask(NodeId, Vec<f64>),
    Mse(NodeId, Vec<f64>),
    /// Cached softmax probabilities and labels.
    SoftmaxCe(NodeId, Vec<f64>, Vec<usize>),
}

impl Op {
    pub fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sum(..) => "sum",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Mask(..) => "dropout",
            Op::Mse(..) => "mse",
            Op::SoftmaxCe(..) => "softmax_cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) => vec![*a, *b],
            Op::Sum(ids) => ids.clone(),
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Mask(a, _)
            | Op::Mse(a, _)
            | Op::SoftmaxCe(a, ..) => vec![*a],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    out: Tensor,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, out: Tensor) -> NodeId {
        self.nodes.push(Node { op, out });
        self.nodes.len() - 1
    }

    /// Records a leaf holding a copy of `tensor` (grad slot reset).
    pub fn leaf(&mut self, tensor: &Tensor) -> NodeId {
        let mut out = tensor.clone();
        out.zero_grad();
        self.push(Op::Leaf, out)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].out
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        self.nodes[id].out.grad()
    }

    pub fn op_tag(&self, id: NodeId) -> &'static str {
        self.nodes[id].op.tag()
    }

    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id].op.inputs()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).expect_dims2("matmul")?;
        let (k2, n) = self.value(b).expect_dims2("matmul")?;
        if k != k2 {
            return Err(PtaError::Dimension {
                op: "matmul",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let out = matmul_raw(self.value(a).values(), self.value(b).values(), m, k, n);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_vec(vec![m, n], out)?))
    }

    /// `x (m x n) + bias (n)` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(x).expect_dims2("add_bias")?;
        if self.value(bias).len() != n {
            return Err(PtaError::Dimension {
                op: "add_bias",
                left: self.value(x).shape().to_vec(),
                right: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).values();
        let mut out = self.value(x).values().to_vec();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push(Op::AddBias(x, bias), Tensor::from_vec(vec![m, n], out)?))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let id = self.sum(&[a, b])?;
        self.nodes[id].op = Op::Add(a, b);
        Ok(id)
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum(&mut self, ids: &[NodeId]) -> Result<NodeId> {
        let first = *ids
            .first()
            .ok_or_else(|| PtaError::validation("sum of zero nodes"))?;
        let shape = self.value(first).shape().to_vec();
        let mut out = vec![0.0; self.value(first).len()];
        for &id in ids {
            let t = self.value(id);
            if t.shape() != shape.as_slice() {
                return Err(PtaError::Dimension {
                    op: "sum",
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
            for (o, v) in out.iter_mut().zip(t.values()) {
                *o += v;
            }
        }
        Ok(self.push(Op::Sum(ids.to_vec()), Tensor::from_vec(shape, out)?))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let t = self.value(a);
        let out = t.values().iter().map(|v| v * factor).collect();
        let out = Tensor::from_vec(t.shape().to_vec(), out).unwrap();
        self.push(Op::Scale(a, factor), out)
    }

    /// Elementwise mean of equally shaped nodes.
    pub fn mean(&mut self, ids: &[NodeId]) -> Result<NodeId> {
        let s = self.sum(ids)?;
        Ok(self.scale(s, 1.0 / ids.len() as f64))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let out = t.values().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::from_vec(t.shape().to_vec(), out).unwrap();
        self.push(Op::Relu(a), out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let out = t.values().iter().map(|v| v.tanh()).collect();
        let out = Tensor::from_vec(t.shape().to_vec(), out).unwrap();
        self.push(Op::Tanh(a), out)
    }

    /// Inverted dropout. In evaluation mode, or with `rate == 0`, the input
    /// node itself is returned.
    pub fn dropout(&mut self, a: NodeId, rate: f64, mask_seed: u64, mode: Mode) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(PtaError::validation(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let mask = dropout_mask(self.value(a).len(), rate, mask_seed);
        let t = self.value(a);
        let out = t.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(t.shape().to_vec(), out)?;
        Ok(self.push(Op::Mask(a, mask), out))
    }

    /// Mean of squared elementwise differences against a constant target.
    pub fn mse_loss(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(PtaError::Dimension {
                op: "mse_loss",
                left: p.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let n = p.len() as f64;
        let loss = p
            .values()
            .iter()
            .zip(target.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Op::Mse(pred, target.values().to_vec()),
            Tensor::scalar(loss),
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits (n x c)`, with max-shift stabilization.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (n, c) = self.value(logits).expect_dims2("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(PtaError::Dimension {
                op: "softmax_cross_entropy",
                left: vec![n, c],
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(PtaError::validation(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let z = self.value(logits).values();
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            total += log_denom - (row[label] - max);
            for (p, v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - max).exp() / denom;
            }
        }
        Ok(self.push(
            Op::SoftmaxCe(logits, probs, labels.to_vec()),
            Tensor::scalar(total / n as f64),
        ))
    }

    /// Adds `d loss / d node` into every reachable node's gradient slot.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(PtaError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss + 1];
        adj[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.propagate(id, &g, &mut adj);
            self.nodes[id].out.accumulate_grad(&g);
        }
        Ok(())
    }

    fn propagate(&self, id: NodeId, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let mut send = |to: NodeId, delta: Vec<f64>| match &mut adj[to] {
            Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
            slot @ None => *slot = Some(delta),
        };
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let (_, n) = self.value(*b).dims2().unwrap();
                send(*a, matmul_a_bt(g, self.value(*b).values(), m, k, n));
                send(*b, matmul_at_b(self.value(*a).values(), g, m, k, n));
            }
            Op::AddBias(x, bias) => {
                let n = self.value(*bias).len();
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                }
                send(*x, g.to_vec());
                send(*bias, gb);
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sum(ids) => {
                for &i in ids {
                    send(i, g.to_vec());
                }
            }
            Op::Scale(a, f) => send(*a, g.iter().map(|v| v * f).collect()),
            Op::Relu(a) => {
                let x = self.value(*a).values();
                send(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                        .collect(),
                );
            }
            Op::Tanh(a) => {
                let y = node.out.values();
                send(
                    *a,
                    g.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect(),
                );
            }
            Op::Mask(a, mask) => send(*a, g.iter().zip(mask).map(|(gv, m)| gv * m).collect()),
            Op::Mse(a, target) => {
                let p = self.value(*a).values();
                let scale = 2.0 * g[0] / p.len() as f64;
                send(
                    *a,
                    p.iter().zip(target).map(|(pv, t)| scale * (pv - t)).collect(),
                );
            }
            Op::SoftmaxCe(a, probs, labels) => {
                let n = labels.len();
                let c = probs.len() / n;
                let scale = g[0] / n as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * c + l] -= scale;
                }
                send(*a, d);
            }
        }
    }
}

/// Dropout mask for `len` elements: zero with probability `rate`, otherwise
/// `1 / (1 - rate)`. Fully determined by `seed`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[rng::TAG_MASK]);
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if r.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = g.leaf(&Tensor::matrix(&[&[3.0], &[4.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).values(), &[3.0, 4.0]);
        assert_eq!(g.value(c).shape(), &[2, 1]);
    }

    #[test]
    fn witness_dot_product() {
        let mut g = Graph::new();
        let w = g.leaf(&Tensor::row(&[2.0, 3.0]));
        let x = g.leaf(&Tensor::matrix(&[&[6.0], &[7.0]]));
        let y = g.matmul(w, x).unwrap();
        assert_eq!(g.value(y).values(), &[33.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::zeros(vec![2, 3]));
        let b = g.leaf(&Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, PtaError::Dimension { .. }));
    }

    #[test]
    fn mse_values() {
        let mut g = Graph::new();
        let p = g.leaf(&Tensor::row(&[33.0]));
        let l = g.mse_loss(p, &Tensor::row(&[1.0])).unwrap();
        assert_eq!(g.value(l).item(), Some(1024.0));
        let p = g.leaf(&Tensor::row(&[59.0]));
        let l = g.mse_loss(p, &Tensor::row(&[1.0])).unwrap();
        assert_eq!(g.value(l).item(), Some(3364.0));
        let p = g.leaf(&Tensor::row(&[1.5, -2.0]));
        let l = g.mse_loss(p, &Tensor::row(&[1.5, -2.0])).unwrap();
        assert_eq!(g.value(l).item(), Some(0.0));
        assert!(g.mse_loss(p, &Tensor::row(&[1.0])).is_err());
    }

    #[test]
    fn cross_entropy_uniform_and_stable() {
        let mut g = Graph::new();
        let z = g.leaf(&Tensor::row(&[0.3; 4]));
        let l = g.softmax_cross_entropy(z, &[2]).unwrap();
        assert!((g.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-15);

        let z = g.leaf(&Tensor::row(&[1000.0, 0.0]));
        let l = g.softmax_cross_entropy(z, &[0]).unwrap();
        let v = g.value(l).item().unwrap();
        assert!(v.is_finite() && v.abs() < 1e-12);

        let z = g.leaf(&Tensor::row(&[0.0, 0.0]));
        assert!(matches!(
            g.softmax_cross_entropy(z, &[2]),
            Err(PtaError::Validation(_))
        ));
    }

    #[test]
    fn dropout_identities_and_errors() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::row(&[1.0, 2.0, 3.0]));
        assert_eq!(g.dropout(x, 0.0, 1, Mode::Train).unwrap(), x);
        assert_eq!(g.dropout(x, 0.9, 1, Mode::Eval).unwrap(), x);
        assert!(g.dropout(x, 1.0, 1, Mode::Train).is_err());
        assert!(g.dropout(x, -0.1, 1, Mode::Eval).is_err());
    }

    #[test]
    fn dropout_zero_fraction_matches_rate() {
        let mask = dropout_mask(100_000, 0.5, 42);
        let zeros = mask.iter().filter(|&&m| m == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.5).abs() < 0.01, "{zeros}");
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        assert_eq!(mask, dropout_mask(100_000, 0.5, 42));
    }

    #[test]
    fn witness_input_gradient() {
        // d/dx (w.x - 1)^2 = 2 (33 - 1) w = [128, 192]
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::row(&[6.0, 7.0]));
        let w = g.leaf(&Tensor::matrix(&[&[2.0], &[3.0]]));
        let y = g.matmul(x, w).unwrap();
        let l = g.mse_loss(y, &Tensor::row(&[1.0])).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x), &[128.0, 192.0]);

        // Repeated backward accumulates.
        g.backward(l).unwrap();
        assert_eq!(g.grad(x), &[256.0, 384.0]);
    }

    #[test]
    fn unrelated_leaf_keeps_zero_grad_and_non_scalar_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::row(&[1.0, 2.0]));
        let unused = g.leaf(&Tensor::row(&[5.0]));
        let l = g.mse_loss(x, &Tensor::row(&[0.0, 0.0])).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(unused), &[0.0]);
        assert!(matches!(g.backward(x), Err(PtaError::Contract(_))));
    }

    #[test]
    fn inputs_precede_nodes() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::row(&[1.0, -1.0]));
        let b = g.relu(a);
        let c = g.tanh(b);
        let d = g.add(b, c).unwrap();
        for id in 0..g.len() {
            assert!(g.inputs(id).iter().all(|&i| i < id));
        }
        assert_eq!(g.op_tag(d), "add");
    }
}
