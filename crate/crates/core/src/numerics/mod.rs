//! Mask-aware matrix kernels, activations, loss and the momentum-SGD update.

mod optim;

pub use optim::{sgd_step, GradientBuffer, OptimizerState, Parameters};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// A weight matrix paired with a same-shape binary mask.
///
/// Dormant positions (mask bit clear) always hold a zero weight; every
/// mutating method restores that before returning.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl MaskedMatrix {
    /// Builds a matrix from values and mask, zeroing every dormant value.
    pub fn new(values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(Error::shape(
                "MaskedMatrix::new",
                format!("{:?}", values.dim()),
                format!("{:?}", mask.dim()),
            ));
        }
        let mut m = MaskedMatrix { values, mask };
        m.apply_mask();
        Ok(m)
    }

    /// All-active matrix.
    pub fn dense(values: Array2<f64>) -> Self {
        let mask = Array2::from_elem(values.dim(), true);
        MaskedMatrix { values, mask }
    }

    /// Fully dormant matrix of the given shape.
    pub fn empty(rows: usize, cols: usize) -> Self {
        MaskedMatrix {
            values: Array2::zeros((rows, cols)),
            mask: Array2::from_elem((rows, cols), false),
        }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Dense weight count `rows * cols`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn mask(&self) -> ArrayView2<'_, bool> {
        self.mask.view()
    }

    /// Number of active connections.
    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn sparsity(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        1.0 - self.nnz() as f64 / self.len() as f64
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }

    pub fn is_active(&self, row: usize, col: usize) -> bool {
        self.mask[[row, col]]
    }

    /// Sets one entry. Writing to a dormant position activates it only when
    /// `active` is true; otherwise the stored value is forced to zero.
    pub fn set(&mut self, row: usize, col: usize, value: f64, active: bool) {
        self.mask[[row, col]] = active;
        self.values[[row, col]] = if active { value } else { 0.0 };
    }

    /// True when every dormant entry holds exactly zero.
    pub fn is_consistent(&self) -> bool {
        self.values
            .iter()
            .zip(self.mask.iter())
            .all(|(&w, &m)| m || w == 0.0)
    }

    /// `W <- W ⊗ Msk`.
    pub(crate) fn apply_mask(&mut self) {
        self.values.zip_mut_with(&self.mask, |w, &m| {
            if !m {
                *w = 0.0;
            }
        });
    }

    /// Mutable access to values and mask together. Callers must leave the
    /// matrix consistent (typically by calling `apply_mask`).
    pub(crate) fn parts_mut(&mut self) -> (&mut Array2<f64>, &mut Array2<bool>) {
        (&mut self.values, &mut self.mask)
    }

    /// `W ⊗ Msk` as a plain dense matrix.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = self.values.clone();
        out.zip_mut_with(&self.mask, |w, &m| {
            if !m {
                *w = 0.0;
            }
        });
        out
    }
}

/// Elementwise nonlinearity applied after a linear map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y = f(x)` and the
    /// pre-activation `x`.
    #[inline]
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Tanh,
            _ => return None,
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Applies `kind` to every element.
pub fn activation(kind: Activation, x: ArrayView1<'_, f64>) -> Array1<f64> {
    x.mapv(|v| kind.apply(v))
}

/// `(W ⊗ Msk)·x + bias`.
pub fn masked_linear(
    layer: &MaskedMatrix,
    bias: ArrayView1<'_, f64>,
    x: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    let (rows, cols) = layer.dim();
    if x.len() != cols {
        return Err(Error::shape("masked_linear input", cols, x.len()));
    }
    if bias.len() != rows {
        return Err(Error::shape("masked_linear bias", rows, bias.len()));
    }
    // Dormant values are zero, so the stored matrix already equals W ⊗ Msk.
    Ok(layer.values.dot(&x) + bias)
}

/// Softmax probabilities and cross-entropy loss `-ln p[label]`.
pub fn softmax_cross_entropy(
    logits: ArrayView1<'_, f64>,
    label: usize,
) -> Result<(Array1<f64>, f64)> {
    let k = logits.len();
    if k < 2 {
        return Err(Error::Parameter(format!(
            "softmax needs at least 2 classes, got {k}"
        )));
    }
    if label >= k {
        return Err(Error::Index {
            index: label,
            limit: k,
        });
    }
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let shifted = logits.mapv(|z| (z - max).exp());
    let sum = shifted.sum();
    let probs = shifted / sum;
    let loss = sum.ln() - (logits[label] - max);
    Ok((probs, loss.max(0.0)))
}

/// Row-wise softmax of a batch of logits.
pub(crate) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|p| p / sum);
    }
    out
}

/// Index of the largest element; the first one wins ties.
pub fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
