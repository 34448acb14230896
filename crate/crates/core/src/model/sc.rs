use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::numerics::{masked_linear, Activation, MaskedMatrix};

/// Sparsely connected layer: masked linear map, activation, then dropout on
/// the activations while training.
#[derive(Debug, Clone, PartialEq)]
pub struct ScLayer {
    pub weights: MaskedMatrix,
    pub bias: Array1<f64>,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl ScLayer {
    pub fn new(
        weights: MaskedMatrix,
        bias: Array1<f64>,
        activation: Activation,
        dropout_rate: f64,
    ) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape("ScLayer bias", weights.rows(), bias.len()));
        }
        check_rate(dropout_rate)?;
        Ok(ScLayer {
            weights,
            bias,
            activation,
            dropout_rate,
        })
    }

    /// Weights drawn uniformly from `±1/sqrt(in_width)`, zero bias, all active.
    pub fn init<R: Rng + ?Sized>(
        in_width: usize,
        out_width: usize,
        activation: Activation,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(
            MaskedMatrix::dense(uniform_fan_in(out_width, in_width, rng)),
            Array1::zeros(out_width),
            activation,
            dropout_rate,
        )
    }

    pub fn in_width(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_width(&self) -> usize {
        self.weights.rows()
    }
}

pub(crate) fn uniform_fan_in<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Array2<f64> {
    let bound = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "dropout rate must lie in [0,1), got {rate}"
        )))
    }
}

/// Inverted dropout keep factor for one unit: `0` or `1/(1-rate)`.
#[inline]
pub(crate) fn keep_factor<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < rate {
        0.0
    } else {
        1.0 / (1.0 - rate)
    }
}

/// Inverted dropout. Identity in eval mode or at rate 0.
pub fn dropout<R: Rng + ?Sized>(
    x: ArrayView1<'_, f64>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Array1<f64>> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.to_owned());
    }
    Ok(x.mapv(|v| v * keep_factor(rate, rng)))
}

/// `activation(masked_linear(x))`, with dropout in train mode.
pub fn sc_forward<R: Rng + ?Sized>(
    layer: &ScLayer,
    x: ArrayView1<'_, f64>,
    mode: Mode,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let z = masked_linear(&layer.weights, layer.bias.view(), x)?;
    let act = layer.activation;
    let y = z.mapv(|v| act.apply(v));
    dropout(y.view(), layer.dropout_rate, mode, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(rate: f64) -> ScLayer {
        ScLayer::new(
            MaskedMatrix::dense(Array2::eye(2)),
            Array1::zeros(2),
            Activation::Relu,
            rate,
        )
        .unwrap()
    }

    #[test]
    fn eval_mode_identity_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = sc_forward(
            &identity_layer(0.5),
            array![-1.0, 2.0].view(),
            Mode::Eval,
            &mut rng,
        )
        .unwrap();
        assert_eq!(y, array![0.0, 2.0]);
    }

    #[test]
    fn zero_rate_train_equals_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = ScLayer::init(5, 4, Activation::Relu, 0.0, &mut rng).unwrap();
        let x = array![0.1, -0.2, 0.3, 0.9, -1.0];
        let a = sc_forward(&layer, x.view(), Mode::Train, &mut rng).unwrap();
        let b = sc_forward(&layer, x.view(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_rate_scales_survivors_and_is_unbiased() {
        let layer = identity_layer(0.5);
        let x = array![0.7, 2.0];
        let eval = sc_forward(
            &layer,
            x.view(),
            Mode::Eval,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let mut sum = Array1::<f64>::zeros(2);
        let trials = 10_000;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = sc_forward(&layer, x.view(), Mode::Train, &mut rng).unwrap();
            for (yi, ei) in y.iter().zip(eval.iter()) {
                assert!(*yi == 0.0 || *yi == 2.0 * ei);
            }
            sum += &y;
        }
        let mean = sum / trials as f64;
        for (m, e) in mean.iter().zip(eval.iter()) {
            assert!((m - e).abs() <= 0.02 * e, "mean {m} vs eval {e}");
        }
    }

    #[test]
    fn dropout_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = array![1.0, -2.0, 3.0];
        assert_eq!(dropout(x.view(), 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(x.view(), 0.9, Mode::Eval, &mut rng).unwrap(), x);
        assert!(dropout(x.view(), 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout(x.view(), -0.1, Mode::Eval, &mut rng).is_err());

        let ones = Array1::<f64>::ones(100_000);
        let y = dropout(ones.view(), 0.2, Mode::Train, &mut rng).unwrap();
        let mean = y.mean().unwrap();
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
    }
}
