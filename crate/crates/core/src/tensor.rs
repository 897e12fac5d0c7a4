use serde::{Deserialize, Serialize};

use crate::error::{PtaError, Result};

/// Dense row-major `f64` array with a gradient slot of the same shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(skip)]
    grad: Vec<f64>,
}

/// Equality compares shape and values; gradient buffers are ignored.
impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.values == other.values
    }
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(PtaError::validation(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(PtaError::Dimension {
                op: "from_vec",
                left: shape,
                right: vec![values.len()],
            });
        }
        Ok(Self {
            grad: vec![0.0; len],
            shape,
            values,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::from_vec(shape, vec![0.0; len]).expect("zero-extent shape")
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(vec![1], vec![value]).unwrap()
    }

    /// `rows x cols` matrix from nested rows. Panics on ragged input.
    pub fn matrix(rows: &[&[f64]]) -> Self {
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix");
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_vec(vec![rows.len(), cols], values).unwrap()
    }

    pub fn row(values: &[f64]) -> Self {
        Self::from_vec(vec![1, values.len()], values.to_vec()).unwrap()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.len() != self.values.len() {
            // Deserialized tensors come back without a grad buffer.
            self.grad = vec![0.0; self.values.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.clear();
        self.grad.resize(self.values.len(), 0.0);
    }

    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.values.len());
        for (g, d) in self.grad_mut().iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.values.len() == 1).then(|| self.values[0])
    }

    /// `(rows, cols)` of a rank-2 tensor; a rank-1 tensor reads as a single row.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Some((1, *n)),
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub(crate) fn expect_dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        self.dims2().ok_or_else(|| PtaError::Dimension {
            op,
            left: self.shape.clone(),
            right: vec![],
        })
    }

    /// Copies of rows `idx` of a rank-2 tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (_, cols) = self.expect_dims2("select_rows")?;
        let mut values = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            values.extend_from_slice(&self.values[i * cols..(i + 1) * cols]);
        }
        Tensor::from_vec(vec![idx.len(), cols], values)
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let (_, cols) = self.dims2().expect("rank-2 tensor");
        &self.values[i * cols..(i + 1) * cols]
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `a (m x k) * b (k x n)`, naive ikj loop.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a^T (k x m)^T * g (m x n)` -> `k x n`, where `a` is `m x k`.
pub(crate) fn matmul_at_b(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
    out
}

/// `g (m x n) * b^T` -> `m x k`, where `b` is `k x n`.
pub(crate) fn matmul_a_bt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}
