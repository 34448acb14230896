//! Batched forward passes that record intermediates, and exact reverse-mode
//! gradients over them.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::sc::keep_factor;
use super::{EdgeNet, Inputs, Mode, Model, ScLayer, ServerNet};
use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Activation, GradientBuffer, MaskedMatrix};

/// Rows per chunk in `predict_logits`.
pub const EVAL_BATCH: usize = 256;

/// Result of one backward pass over a recorded mini-batch.
#[derive(Debug, Clone)]
pub struct Backward {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// Instances whose argmax logit equals the label.
    pub correct: usize,
    /// Summed per-sample gradients; `sample_count` is the batch size.
    pub grads: GradientBuffer,
}

/// Records one batched forward pass so that `backward` can differentiate it.
#[derive(Debug, Default)]
pub struct Recorder {
    tape: Option<Tape>,
}

#[derive(Debug)]
struct Tape {
    logits: Array2<f64>,
    body: Body,
}

#[derive(Debug)]
enum Body {
    Server(Vec<LayerRecord>),
    Edge(EdgeRecord),
}

#[derive(Debug)]
struct LayerRecord {
    input: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    keep: Option<Array2<f64>>,
}

#[derive(Debug)]
struct GateRecord {
    hidden_pre: Array2<f64>,
    keep: Option<Array2<f64>>,
    hidden_out: Array2<f64>,
    gate: Array2<f64>,
}

#[derive(Debug)]
struct StepRecord {
    joint: Array2<f64>,
    gates: Vec<GateRecord>,
    c_prev: Array2<f64>,
    tanh_c: Array2<f64>,
}

#[derive(Debug)]
struct EdgeRecord {
    steps: Vec<StepRecord>,
    h_last: Array2<f64>,
}

fn affine(x: &Array2<f64>, w: &MaskedMatrix, b: &Array1<f64>) -> Array2<f64> {
    x.dot(&w.values().t()) + b
}

fn dropout_factors<R: Rng + ?Sized>(
    dim: (usize, usize),
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Option<Array2<f64>> {
    if mode == Mode::Train && rate > 0.0 {
        Some(Array2::from_shape_simple_fn(dim, || keep_factor(rate, rng)))
    } else {
        None
    }
}

fn check_width(model: &Model, inputs: &Inputs) -> Result<()> {
    let (kind_ok, width) = match inputs {
        Inputs::Flat(a) => (matches!(model, Model::Server(_)), a.ncols()),
        Inputs::Sequence(a) => (matches!(model, Model::Edge(_)), a.len_of(Axis(2))),
    };
    if !kind_ok {
        return Err(Error::shape(
            "batch input kind",
            model.kind().name(),
            inputs.kind().name(),
        ));
    }
    if width != model.input_width() {
        return Err(Error::shape(
            "batch input width",
            model.input_width(),
            width,
        ));
    }
    if let Inputs::Sequence(a) = inputs {
        if a.len_of(Axis(1)) == 0 {
            return Err(Error::Parameter("empty input sequence".into()));
        }
    }
    Ok(())
}

fn server_forward<R: Rng + ?Sized>(
    net: &ServerNet,
    x: &Array2<f64>,
    mode: Mode,
    rng: &mut R,
    record: bool,
) -> (Array2<f64>, Vec<LayerRecord>) {
    let mut records = Vec::new();
    let mut a = x.clone();
    for layer in &net.layers {
        let pre = affine(&a, &layer.weights, &layer.bias);
        let act_kind = layer.activation;
        let act = pre.mapv(|v| act_kind.apply(v));
        let keep = dropout_factors(act.dim(), layer.dropout_rate, mode, rng);
        let out = match &keep {
            Some(k) => &act * k,
            None => act.clone(),
        };
        if record {
            records.push(LayerRecord {
                input: std::mem::replace(&mut a, out),
                pre,
                act,
                keep,
            });
        } else {
            a = out;
        }
    }
    (a, records)
}

fn edge_forward<R: Rng + ?Sized>(
    net: &EdgeNet,
    x: &ndarray::Array3<f64>,
    mode: Mode,
    rng: &mut R,
    record: bool,
) -> (Array2<f64>, Option<EdgeRecord>) {
    let cell = &net.cell;
    let batch = x.len_of(Axis(0));
    let steps = x.len_of(Axis(1));
    let state = cell.state_width();
    let mut h = Array2::<f64>::zeros((batch, state));
    let mut c = Array2::<f64>::zeros((batch, state));
    let mut records = Vec::with_capacity(if record { steps } else { 0 });

    for t in 0..steps {
        let joint = ndarray::concatenate![Axis(1), x.slice(s![.., t, ..]), h.view()];
        let mut gates = Vec::with_capacity(4);
        for (k, gate) in cell.gates.iter().enumerate() {
            let hidden_pre = affine(&joint, &gate.hidden, &gate.hidden_bias);
            let mut hidden_out = hidden_pre.mapv(|v| v.max(0.0));
            let keep = dropout_factors(hidden_out.dim(), cell.dropout_rate, mode, rng);
            if let Some(k) = &keep {
                hidden_out *= k;
            }
            let pre = affine(&hidden_out, &gate.proj, &gate.proj_bias);
            let gate_out = if k == 3 {
                pre.mapv_into(f64::tanh)
            } else {
                pre.mapv_into(crate::numerics::sigmoid)
            };
            gates.push(GateRecord {
                hidden_pre,
                keep,
                hidden_out,
                gate: gate_out,
            });
        }
        let c_next = &gates[0].gate * &c + &gates[1].gate * &gates[3].gate;
        let tanh_c = c_next.mapv(f64::tanh);
        let h_next = &gates[2].gate * &tanh_c;
        if record {
            records.push(StepRecord {
                joint,
                gates,
                c_prev: std::mem::replace(&mut c, c_next),
                tanh_c,
            });
        } else {
            c = c_next;
        }
        h = h_next;
    }
    let logits = affine(&h, &net.head.weights, &net.head.bias);
    let rec = record.then(|| EdgeRecord {
        steps: records,
        h_last: h,
    });
    (logits, rec)
}

/// Eval-mode logits for every instance, computed in chunks of `EVAL_BATCH`.
pub fn predict_logits(model: &Model, inputs: &Inputs) -> Result<Array2<f64>> {
    check_width(model, inputs)?;
    let n = inputs.len();
    let mut out = Array2::zeros((n, model.num_classes()));
    // Eval mode never draws from the generator.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = inputs.select(&idx);
        let logits = match (model, &batch) {
            (Model::Server(net), Inputs::Flat(x)) => {
                server_forward(net, x, Mode::Eval, &mut rng, false).0
            }
            (Model::Edge(net), Inputs::Sequence(x)) => {
                edge_forward(net, x, Mode::Eval, &mut rng, false).0
            }
            _ => unreachable!("checked by check_width"),
        };
        out.slice_mut(s![start..end, ..]).assign(&logits);
        start = end;
    }
    Ok(out)
}

impl Recorder {
    pub fn new() -> Self {
        Recorder::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.tape.is_some()
    }

    /// Runs and records a batched forward pass, returning `batch x classes`
    /// logits. Replaces any earlier recording.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        model: &Model,
        inputs: &Inputs,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        check_width(model, inputs)?;
        let (logits, body) = match (model, inputs) {
            (Model::Server(net), Inputs::Flat(x)) => {
                let (l, rec) = server_forward(net, x, mode, rng, true);
                (l, Body::Server(rec))
            }
            (Model::Edge(net), Inputs::Sequence(x)) => {
                let (l, rec) = edge_forward(net, x, mode, rng, true);
                (l, Body::Edge(rec.expect("recorded")))
            }
            _ => unreachable!("checked by check_width"),
        };
        self.tape = Some(Tape {
            logits: logits.clone(),
            body,
        });
        Ok(logits)
    }

    /// Softmax cross-entropy against `labels`, then gradients of the mean
    /// batch loss. Consumes the recording.
    pub fn backward(&mut self, model: &Model, labels: &[usize]) -> Result<Backward> {
        let tape = self.tape.as_ref().ok_or(Error::State(
            "backward called without a recorded forward pass",
        ))?;
        let (batch, classes) = tape.logits.dim();
        if labels.len() != batch {
            return Err(Error::shape("backward labels", batch, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index {
                index: bad,
                limit: classes,
            });
        }
        let probs = softmax_rows(&tape.logits);
        let mut loss = 0.0;
        let mut correct = 0;
        for (r, &label) in labels.iter().enumerate() {
            loss += -probs[[r, label]].max(f64::MIN_POSITIVE).ln();
            if crate::numerics::argmax(tape.logits.row(r)) == label {
                correct += 1;
            }
        }
        let mut upstream = probs;
        for (r, &label) in labels.iter().enumerate() {
            upstream[[r, label]] -= 1.0;
        }
        let grads = self.backward_from(model, &upstream)?;
        Ok(Backward {
            loss: loss / batch as f64,
            correct,
            grads,
        })
    }

    /// Back-propagates an arbitrary per-sample upstream gradient
    /// `dL_n/dlogits` (`batch x classes`). The returned buffer holds the
    /// summed gradients with `sample_count` = batch size.
    pub fn backward_from(
        &mut self,
        model: &Model,
        upstream: &Array2<f64>,
    ) -> Result<GradientBuffer> {
        let tape = self.tape.take().ok_or(Error::State(
            "backward called without a recorded forward pass",
        ))?;
        if upstream.dim() != tape.logits.dim() {
            return Err(Error::shape(
                "upstream gradient",
                format!("{:?}", tape.logits.dim()),
                format!("{:?}", upstream.dim()),
            ));
        }
        let mut grads = GradientBuffer::zeros_like(model);
        grads.sample_count = upstream.nrows();
        match (model, tape.body) {
            (Model::Server(net), Body::Server(records)) => {
                server_backward(net, &records, upstream, &mut grads)
            }
            (Model::Edge(net), Body::Edge(record)) => {
                edge_backward(net, &record, upstream, &mut grads)
            }
            _ => {
                return Err(Error::State(
                    "recorded pass belongs to a different model kind",
                ))
            }
        }
        Ok(grads)
    }
}

fn through_activation(d_out: &Array2<f64>, layer: &ScLayer, rec: &LayerRecord) -> Array2<f64> {
    let kind: Activation = layer.activation;
    let mut dz = d_out.clone();
    if let Some(k) = &rec.keep {
        dz *= k;
    }
    ndarray::Zip::from(&mut dz)
        .and(&rec.pre)
        .and(&rec.act)
        .for_each(|d, &z, &y| *d *= kind.derivative(z, y));
    dz
}

fn server_backward(
    net: &ServerNet,
    records: &[LayerRecord],
    upstream: &Array2<f64>,
    grads: &mut GradientBuffer,
) {
    let mut d_out = upstream.clone();
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let rec = &records[l];
        let dz = through_activation(&d_out, layer, rec);
        grads.matrices[l] = dz.t().dot(&rec.input);
        grads.biases[l] = dz.sum_axis(Axis(0));
        if l > 0 {
            d_out = dz.dot(&layer.weights.values());
        }
    }
}

fn edge_backward(
    net: &EdgeNet,
    record: &EdgeRecord,
    upstream: &Array2<f64>,
    grads: &mut GradientBuffer,
) {
    let cell = &net.cell;
    let input_width = cell.input_width();
    let head_index = 8;
    grads.matrices[head_index] = upstream.t().dot(&record.h_last);
    grads.biases[head_index] = upstream.sum_axis(Axis(0));
    let mut dh = upstream.dot(&net.head.weights.values());
    let mut dc = Array2::<f64>::zeros(dh.dim());

    for step in record.steps.iter().rev() {
        let f = &step.gates[0].gate;
        let i = &step.gates[1].gate;
        let o = &step.gates[2].gate;
        let g = &step.gates[3].gate;

        let d_o = &dh * &step.tanh_c;
        dc += &(&dh * o * &step.tanh_c.mapv(|t| 1.0 - t * t));
        let d_f = &dc * &step.c_prev;
        let d_i = &dc * g;
        let d_g = &dc * i;
        let dc_prev = &dc * f;

        let d_pre = [
            d_f * &f.mapv(|y| y * (1.0 - y)),
            d_i * &i.mapv(|y| y * (1.0 - y)),
            d_o * &o.mapv(|y| y * (1.0 - y)),
            d_g * &g.mapv(|y| 1.0 - y * y),
        ];
        let mut d_joint = Array2::<f64>::zeros(step.joint.dim());
        for (k, (gate, rec)) in cell.gates.iter().zip(&step.gates).enumerate() {
            let dz = &d_pre[k];
            grads.matrices[2 * k + 1] += &dz.t().dot(&rec.hidden_out);
            grads.biases[2 * k + 1] += &dz.sum_axis(Axis(0));
            let mut d_hidden = dz.dot(&gate.proj.values());
            if let Some(keep) = &rec.keep {
                d_hidden *= keep;
            }
            ndarray::Zip::from(&mut d_hidden)
                .and(&rec.hidden_pre)
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            grads.matrices[2 * k] += &d_hidden.t().dot(&step.joint);
            grads.biases[2 * k] += &d_hidden.sum_axis(Axis(0));
            d_joint += &d_hidden.dot(&gate.hidden.values());
        }
        dh = d_joint.slice(s![.., input_width..]).to_owned();
        dc = dc_prev;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EdgeSpec, InstanceView, ServerSpec};
    use ndarray::{array, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = ServerSpec {
            input_width: 3,
            hidden_widths: vec![2],
            dropout: 0.0,
        }
        .build(2, &mut rng)
        .unwrap();
        let mut rec = Recorder::new();
        assert!(matches!(rec.backward(&model, &[0]), Err(Error::State(_))));
        let x = Inputs::Flat(Array2::ones((1, 3)));
        rec.forward(&model, &x, Mode::Eval, &mut rng).unwrap();
        rec.backward(&model, &[1]).unwrap();
        // the recording is consumed
        assert!(matches!(rec.backward(&model, &[1]), Err(Error::State(_))));
    }

    #[test]
    fn linear_gradient_ignores_mask() {
        // One masked linear layer with a scalar output and upstream 1:
        // dL/dW[m,n] = x[n] even where the mask is clear.
        let layer = ScLayer::new(
            MaskedMatrix::new(array![[0.5, 0.0, -1.0]], array![[true, false, true]]).unwrap(),
            array![0.0],
            Activation::Identity,
            0.0,
        )
        .unwrap();
        let model = Model::Server(ServerNet {
            layers: vec![layer],
        });
        let mut rec = Recorder::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = array![[2.0, -3.0, 0.25]];
        rec.forward(&model, &Inputs::Flat(x.clone()), Mode::Eval, &mut rng)
            .unwrap();
        let upstream = array![[1.5]];
        let g = rec.backward_from(&model, &upstream).unwrap();
        assert_eq!(g.matrices[0], &x * 1.5);
        assert_eq!(g.biases[0], array![1.5]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = EdgeSpec {
            input_width: 3,
            state_width: 4,
            gate_hidden_width: 4,
            dropout: 0.0,
        }
        .build(2, &mut rng)
        .unwrap();
        let x = Inputs::Sequence(Array3::from_elem((2, 3, 3), 0.4));
        let mut rec = Recorder::new();
        rec.forward(&model, &x, Mode::Train, &mut rng).unwrap();
        let g = rec.backward_from(&model, &Array2::zeros((2, 2))).unwrap();
        assert!(g.is_zero());
        assert_eq!(g.sample_count, 2);
    }

    #[test]
    fn batched_eval_matches_single_instance_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let server = ServerSpec {
            input_width: 7,
            hidden_widths: vec![6, 5],
            dropout: 0.2,
        }
        .build(3, &mut rng)
        .unwrap();
        let x = Array2::from_shape_fn((4, 7), |(i, j)| ((i * 7 + j) as f64).sin());
        let inputs = Inputs::Flat(x);
        let batched = predict_logits(&server, &inputs).unwrap();
        for r in 0..4 {
            let single = server
                .forward(inputs.instance(r), Mode::Eval, &mut rng)
                .unwrap();
            for (a, b) in single.iter().zip(batched.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        let edge = EdgeSpec {
            input_width: 3,
            state_width: 4,
            gate_hidden_width: 5,
            dropout: 0.2,
        }
        .build(2, &mut rng)
        .unwrap();
        let x = Array3::from_shape_fn((3, 6, 3), |(i, t, j)| ((i + 2 * t + 3 * j) as f64).cos());
        let inputs = Inputs::Sequence(x);
        let batched = predict_logits(&edge, &inputs).unwrap();
        for r in 0..3 {
            let InstanceView::Sequence(seq) = inputs.instance(r) else {
                unreachable!()
            };
            let single = edge
                .forward(InstanceView::Sequence(seq), Mode::Eval, &mut rng)
                .unwrap();
            for (a, b) in single.iter().zip(batched.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
