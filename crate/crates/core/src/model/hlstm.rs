use ndarray::{concatenate, s, Array1, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::sc::{check_rate, dropout, uniform_fan_in};
use super::Mode;
use crate::error::{Error, Result};
use crate::numerics::{masked_linear, sigmoid, MaskedMatrix};

/// Gate order used everywhere: forget, input, output, cell update.
pub const GATE_NAMES: [&str; 4] = ["f", "i", "o", "g"];

/// One deep control gate: a ReLU hidden layer over `[x_t, h_{t-1}]` followed
/// by a projection to the state width.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub hidden: MaskedMatrix,
    pub hidden_bias: Array1<f64>,
    pub proj: MaskedMatrix,
    pub proj_bias: Array1<f64>,
}

impl Gate {
    pub fn hidden_width(&self) -> usize {
        self.hidden.rows()
    }
}

/// Hidden-layer LSTM cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HlstmCell {
    input_width: usize,
    state_width: usize,
    pub gates: [Gate; 4],
    pub dropout_rate: f64,
}

impl HlstmCell {
    pub fn new(
        input_width: usize,
        state_width: usize,
        gates: [Gate; 4],
        dropout_rate: f64,
    ) -> Result<Self> {
        check_rate(dropout_rate)?;
        let joint = input_width + state_width;
        for gate in &gates {
            let hw = gate.hidden.rows();
            if gate.hidden.cols() != joint || gate.hidden_bias.len() != hw {
                return Err(Error::shape(
                    "H-LSTM gate hidden layer",
                    format!("{hw}x{joint}"),
                    format!("{:?}/{}", gate.hidden.dim(), gate.hidden_bias.len()),
                ));
            }
            if gate.proj.dim() != (state_width, hw) || gate.proj_bias.len() != state_width {
                return Err(Error::shape(
                    "H-LSTM gate projection",
                    format!("{state_width}x{hw}"),
                    format!("{:?}/{}", gate.proj.dim(), gate.proj_bias.len()),
                ));
            }
        }
        Ok(HlstmCell {
            input_width,
            state_width,
            gates,
            dropout_rate,
        })
    }

    /// Dense cell with uniform fan-in initialisation and zero biases.
    pub fn init<R: Rng + ?Sized>(
        input_width: usize,
        state_width: usize,
        hidden_width: usize,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let joint = input_width + state_width;
        let mut make = || Gate {
            hidden: MaskedMatrix::dense(uniform_fan_in(hidden_width, joint, rng)),
            hidden_bias: Array1::zeros(hidden_width),
            proj: MaskedMatrix::dense(uniform_fan_in(state_width, hidden_width, rng)),
            proj_bias: Array1::zeros(state_width),
        };
        let gates = [make(), make(), make(), make()];
        Self::new(input_width, state_width, gates, dropout_rate)
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn state_width(&self) -> usize {
        self.state_width
    }

    pub fn hidden_width(&self) -> usize {
        self.gates[0].hidden_width()
    }
}

/// One recurrence step. Returns `(h_t, c_t)`.
pub fn hlstm_step<R: Rng + ?Sized>(
    cell: &HlstmCell,
    x: ArrayView1<'_, f64>,
    h_prev: ArrayView1<'_, f64>,
    c_prev: ArrayView1<'_, f64>,
    mode: Mode,
    rng: &mut R,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if x.len() != cell.input_width {
        return Err(Error::shape("hlstm_step input", cell.input_width, x.len()));
    }
    if h_prev.len() != cell.state_width {
        return Err(Error::shape(
            "hlstm_step h_prev",
            cell.state_width,
            h_prev.len(),
        ));
    }
    if c_prev.len() != cell.state_width {
        return Err(Error::shape(
            "hlstm_step c_prev",
            cell.state_width,
            c_prev.len(),
        ));
    }
    let u = concatenate![Axis(0), x, h_prev];
    let mut pre = Vec::with_capacity(4);
    for gate in &cell.gates {
        let a = masked_linear(&gate.hidden, gate.hidden_bias.view(), u.view())?
            .mapv_into(|v| v.max(0.0));
        let a = dropout(a.view(), cell.dropout_rate, mode, rng)?;
        pre.push(masked_linear(&gate.proj, gate.proj_bias.view(), a.view())?);
    }
    let f = pre[0].mapv(sigmoid);
    let i = pre[1].mapv(sigmoid);
    let o = pre[2].mapv(sigmoid);
    let g = pre[3].mapv(f64::tanh);
    let c = &f * &c_prev + &i * &g;
    let h = &o * &c.mapv(f64::tanh);
    Ok((h, c))
}

/// Folds `hlstm_step` over a `T x input_width` sequence from zero state and
/// returns the final hidden state.
pub fn hlstm_unroll<R: Rng + ?Sized>(
    cell: &HlstmCell,
    sequence: ArrayView2<'_, f64>,
    mode: Mode,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if sequence.nrows() == 0 {
        return Err(Error::Parameter("empty input sequence".into()));
    }
    let mut h = Array1::zeros(cell.state_width);
    let mut c = Array1::zeros(cell.state_width);
    for t in 0..sequence.nrows() {
        let (h_next, c_next) = hlstm_step(
            cell,
            sequence.slice(s![t, ..]),
            h.view(),
            c.view(),
            mode,
            rng,
        )?;
        h = h_next;
        c = c_next;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_cell(input: usize, state: usize) -> HlstmCell {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cell = HlstmCell::init(input, state, state, 0.0, &mut rng).unwrap();
        for gate in cell.gates.iter_mut() {
            gate.hidden = MaskedMatrix::empty(state, input + state);
            gate.proj = MaskedMatrix::empty(state, state);
        }
        cell
    }

    #[test]
    fn zero_cell_from_zero_state() {
        let cell = zero_cell(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (h, c) = hlstm_step(
            &cell,
            array![1.0, -2.0, 0.5].view(),
            Array1::zeros(4).view(),
            Array1::zeros(4).view(),
            Mode::Eval,
            &mut rng,
        )
        .unwrap();
        assert_eq!(h, Array1::<f64>::zeros(4));
        assert_eq!(c, Array1::<f64>::zeros(4));
    }

    #[test]
    fn zero_cell_halves_cell_state() {
        let cell = zero_cell(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c_prev = array![1.0, -4.0, 0.3];
        let (h, c) = hlstm_step(
            &cell,
            array![0.2, 0.1].view(),
            array![0.5, 0.5, 0.5].view(),
            c_prev.view(),
            Mode::Eval,
            &mut rng,
        )
        .unwrap();
        for k in 0..3 {
            let want_c = 0.5 * c_prev[k];
            assert!((c[k] - want_c).abs() < 1e-15);
            assert!((h[k] - 0.5 * want_c.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn unroll_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cell = HlstmCell::init(3, 4, 5, 0.0, &mut rng).unwrap();
        let seq = Array2::from_shape_fn((1, 3), |(_, j)| j as f64 * 0.3 - 0.2);
        let h1 = hlstm_unroll(&cell, seq.view(), Mode::Eval, &mut rng).unwrap();
        let (h, _) = hlstm_step(
            &cell,
            seq.row(0),
            Array1::zeros(4).view(),
            Array1::zeros(4).view(),
            Mode::Eval,
            &mut rng,
        )
        .unwrap();
        assert_eq!(h1, h);

        let empty = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            hlstm_unroll(&cell, empty.view(), Mode::Eval, &mut rng),
            Err(Error::Parameter(_))
        ));

        let z = zero_cell(3, 4);
        let seq = Array2::from_shape_fn((10, 3), |(t, j)| (t * 3 + j) as f64);
        let h = hlstm_unroll(&z, seq.view(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(h, Array1::<f64>::zeros(4));
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cell = HlstmCell::init(3, 4, 4, 0.0, &mut rng).unwrap();
        let r = hlstm_step(
            &cell,
            Array1::zeros(2).view(),
            Array1::zeros(4).view(),
            Array1::zeros(4).view(),
            Mode::Eval,
            &mut rng,
        );
        assert!(matches!(r, Err(Error::Shape { .. })));
    }
}
