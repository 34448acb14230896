use ndarray::{Array1, Array2};

use super::MaskedMatrix;
use crate::error::{Error, Result};

/// Anything exposing an ordered set of masked weight matrices and biases.
///
/// The order is fixed for a given model so gradient and velocity buffers can
/// mirror it positionally.
pub trait Parameters {
    fn matrices(&self) -> Vec<&MaskedMatrix>;
    fn matrices_mut(&mut self) -> Vec<&mut MaskedMatrix>;
    fn biases(&self) -> Vec<&Array1<f64>>;
    fn biases_mut(&mut self) -> Vec<&mut Array1<f64>>;
}

/// Summed per-sample gradients for every parameter.
///
/// Gradients exist for dormant positions too; growth ranks them.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub matrices: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub sample_count: usize,
}

impl GradientBuffer {
    pub fn zeros_like<P: Parameters + ?Sized>(params: &P) -> Self {
        GradientBuffer {
            matrices: params
                .matrices()
                .iter()
                .map(|m| Array2::zeros(m.dim()))
                .collect(),
            biases: params
                .biases()
                .iter()
                .map(|b| Array1::zeros(b.len()))
                .collect(),
            sample_count: 0,
        }
    }

    /// Adds another buffer's sums and sample count.
    pub fn accumulate(&mut self, other: &GradientBuffer) -> Result<()> {
        self.check_shapes(other)?;
        for (a, b) in self.matrices.iter_mut().zip(&other.matrices) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
        self.sample_count += other.sample_count;
        Ok(())
    }

    /// Average gradient of matrix `index`.
    pub fn mean_matrix(&self, index: usize) -> Result<Array2<f64>> {
        if self.sample_count == 0 {
            return Err(Error::State("average gradient of an empty buffer"));
        }
        let m = self.matrices.get(index).ok_or(Error::Index {
            index,
            limit: self.matrices.len(),
        })?;
        Ok(m / self.sample_count as f64)
    }

    pub fn mean_bias(&self, index: usize) -> Result<Array1<f64>> {
        if self.sample_count == 0 {
            return Err(Error::State("average gradient of an empty buffer"));
        }
        let b = self.biases.get(index).ok_or(Error::Index {
            index,
            limit: self.biases.len(),
        })?;
        Ok(b / self.sample_count as f64)
    }

    pub fn is_zero(&self) -> bool {
        self.matrices.iter().all(|m| m.iter().all(|&g| g == 0.0))
            && self.biases.iter().all(|b| b.iter().all(|&g| g == 0.0))
    }

    fn check_shapes(&self, other: &GradientBuffer) -> Result<()> {
        if self.matrices.len() != other.matrices.len() || self.biases.len() != other.biases.len() {
            return Err(Error::shape(
                "gradient buffer layout",
                format!("{}+{}", self.matrices.len(), self.biases.len()),
                format!("{}+{}", other.matrices.len(), other.biases.len()),
            ));
        }
        for (a, b) in self.matrices.iter().zip(&other.matrices) {
            if a.dim() != b.dim() {
                return Err(Error::shape(
                    "gradient matrix",
                    format!("{:?}", a.dim()),
                    format!("{:?}", b.dim()),
                ));
            }
        }
        for (a, b) in self.biases.iter().zip(&other.biases) {
            if a.len() != b.len() {
                return Err(Error::shape("gradient bias", a.len(), b.len()));
            }
        }
        Ok(())
    }
}

/// Learning rate, momentum and velocity buffers for classical momentum SGD.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    learning_rate: f64,
    momentum: f64,
    velocity: Option<GradientBuffer>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Parameter(format!(
                "momentum must lie in [0,1), got {momentum}"
            )));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            velocity: None,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn set_learning_rate(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        self.learning_rate = lr;
        Ok(())
    }

    pub fn reset_velocity(&mut self) {
        self.velocity = None;
    }
}

/// One momentum step on the mean gradient in `grads`:
/// `v <- μv + g`, `θ <- θ - ηv`, then `θ <- θ ⊗ Msk`. Biases are unmasked.
///
/// Velocity at dormant positions is cleared along with the weight, so a
/// connection grown later starts without stale momentum.
pub fn sgd_step<P: Parameters + ?Sized>(
    params: &mut P,
    grads: &GradientBuffer,
    opt: &mut OptimizerState,
) -> Result<()> {
    if grads.sample_count == 0 {
        return Err(Error::State("sgd step with an empty gradient buffer"));
    }
    let template = GradientBuffer::zeros_like(params);
    template.check_shapes(grads)?;
    let velocity = opt.velocity.get_or_insert(template);
    velocity.check_shapes(grads)?;

    let scale = 1.0 / grads.sample_count as f64;
    let (lr, mu) = (opt.learning_rate, opt.momentum);

    for ((matrix, g), v) in params
        .matrices_mut()
        .into_iter()
        .zip(&grads.matrices)
        .zip(velocity.matrices.iter_mut())
    {
        let (values, mask) = matrix.parts_mut();
        ndarray::Zip::from(values)
            .and(&*mask)
            .and(g)
            .and(v)
            .for_each(|w, &m, &g, v| {
                if m {
                    *v = mu * *v + g * scale;
                    *w -= lr * *v;
                } else {
                    *v = 0.0;
                    *w = 0.0;
                }
            });
    }
    for ((bias, g), v) in params
        .biases_mut()
        .into_iter()
        .zip(&grads.biases)
        .zip(velocity.biases.iter_mut())
    {
        ndarray::Zip::from(bias).and(g).and(v).for_each(|b, &g, v| {
            *v = mu * *v + g * scale;
            *b -= lr * *v;
        });
    }
    Ok(())
}
