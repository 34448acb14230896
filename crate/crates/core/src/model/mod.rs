//! SC layers, the hidden-layer LSTM cell and the two reference classifiers.

mod hlstm;
mod sc;
mod tape;

pub use hlstm::{hlstm_step, hlstm_unroll, Gate, HlstmCell, GATE_NAMES};
pub use sc::{dropout, sc_forward, ScLayer};
pub use tape::{predict_logits, Backward, Recorder, EVAL_BATCH};

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{masked_linear, Activation, MaskedMatrix, Parameters};

/// Flattened input width of the server classifier.
pub const SERVER_INPUT_WIDTH: usize = 3712;
/// Hidden widths of the server classifier, before the class layer.
pub const SERVER_HIDDEN_WIDTHS: [usize; 5] = [1024, 512, 256, 128, 64];
/// Per-step input width of the edge classifier.
pub const EDGE_INPUT_WIDTH: usize = 40;
pub const EDGE_STATE_WIDTH: usize = 96;
pub const EDGE_GATE_HIDDEN_WIDTH: usize = 96;
pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Server,
    Edge,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Server => "server",
            ModelKind::Edge => "edge",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "server" => Ok(ModelKind::Server),
            "edge" => Ok(ModelKind::Edge),
            other => Err(Error::Parameter(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Stack of SC layers; the last one has no activation and feeds softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerNet {
    pub layers: Vec<ScLayer>,
}

/// One H-LSTM layer followed by a dense linear head on the final hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeNet {
    pub cell: HlstmCell,
    pub head: ScLayer,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Server(ServerNet),
    Edge(EdgeNet),
}

/// Architecture of a server-kind model.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerSpec {
    pub input_width: usize,
    pub hidden_widths: Vec<usize>,
    pub dropout: f64,
}

impl Default for ServerSpec {
    fn default() -> Self {
        ServerSpec {
            input_width: SERVER_INPUT_WIDTH,
            hidden_widths: SERVER_HIDDEN_WIDTHS.to_vec(),
            dropout: DEFAULT_DROPOUT,
        }
    }
}

/// Architecture of an edge-kind model.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSpec {
    pub input_width: usize,
    pub state_width: usize,
    pub gate_hidden_width: usize,
    pub dropout: f64,
}

impl Default for EdgeSpec {
    fn default() -> Self {
        EdgeSpec {
            input_width: EDGE_INPUT_WIDTH,
            state_width: EDGE_STATE_WIDTH,
            gate_hidden_width: EDGE_GATE_HIDDEN_WIDTH,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes == 2 || num_classes == 3 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "unsupported class count {num_classes}; expected 2 or 3"
        )))
    }
}

impl ServerSpec {
    /// Dense model with every mask set; `seed_init` sparsifies it.
    pub fn build<R: Rng + ?Sized>(&self, num_classes: usize, rng: &mut R) -> Result<Model> {
        check_classes(num_classes)?;
        if self.input_width == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Parameter("layer widths must be positive".into()));
        }
        let mut layers = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut in_width = self.input_width;
        for &w in &self.hidden_widths {
            layers.push(ScLayer::init(
                in_width,
                w,
                Activation::Relu,
                self.dropout,
                rng,
            )?);
            in_width = w;
        }
        layers.push(ScLayer::init(
            in_width,
            num_classes,
            Activation::Identity,
            0.0,
            rng,
        )?);
        Ok(Model::Server(ServerNet { layers }))
    }
}

impl EdgeSpec {
    pub fn build<R: Rng + ?Sized>(&self, num_classes: usize, rng: &mut R) -> Result<Model> {
        check_classes(num_classes)?;
        if self.input_width == 0 || self.state_width == 0 || self.gate_hidden_width == 0 {
            return Err(Error::Parameter("cell widths must be positive".into()));
        }
        let cell = HlstmCell::init(
            self.input_width,
            self.state_width,
            self.gate_hidden_width,
            self.dropout,
            rng,
        )?;
        let head = ScLayer::init(
            self.state_width,
            num_classes,
            Activation::Identity,
            0.0,
            rng,
        )?;
        Ok(Model::Edge(EdgeNet { cell, head }))
    }
}

/// Full-size server classifier (3712 → 1024 → 512 → 256 → 128 → 64 → k).
pub fn build_server<R: Rng + ?Sized>(num_classes: usize, rng: &mut R) -> Result<Model> {
    ServerSpec::default().build(num_classes, rng)
}

/// Full-size edge classifier (H-LSTM, state 96, gate hidden 96, input 40).
pub fn build_edge<R: Rng + ?Sized>(num_classes: usize, rng: &mut R) -> Result<Model> {
    EdgeSpec::default().build(num_classes, rng)
}

/// One census row per masked matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCensus {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    /// False for the edge head, which is never grown or pruned.
    pub prunable: bool,
}

impl MatrixCensus {
    pub fn dense(&self) -> usize {
        self.rows * self.cols
    }
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Server(_) => ModelKind::Server,
            Model::Edge(_) => ModelKind::Edge,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Model::Server(net) => net.layers.last().map_or(0, ScLayer::out_width),
            Model::Edge(net) => net.head.out_width(),
        }
    }

    /// Width of one input vector (per step for edge models).
    pub fn input_width(&self) -> usize {
        match self {
            Model::Server(net) => net.layers.first().map_or(0, ScLayer::in_width),
            Model::Edge(net) => net.cell.input_width(),
        }
    }

    /// Which matrices take part in grow and prune, in `Parameters` order.
    pub fn prunable(&self) -> Vec<bool> {
        match self {
            Model::Server(net) => vec![true; net.layers.len()],
            Model::Edge(_) => {
                let mut v = vec![true; 8];
                v.push(false);
                v
            }
        }
    }

    pub fn matrix_names(&self) -> Vec<String> {
        match self {
            Model::Server(net) => (0..net.layers.len())
                .map(|i| format!("sc{}", i + 1))
                .collect(),
            Model::Edge(_) => {
                let mut names = Vec::with_capacity(9);
                for g in GATE_NAMES {
                    names.push(format!("gate_{g}.hidden"));
                    names.push(format!("gate_{g}.proj"));
                }
                names.push("head".into());
                names
            }
        }
    }

    pub fn census(&self) -> Vec<MatrixCensus> {
        self.matrix_names()
            .into_iter()
            .zip(self.matrices())
            .zip(self.prunable())
            .map(|((name, m), prunable)| MatrixCensus {
                name,
                rows: m.rows(),
                cols: m.cols(),
                nnz: m.nnz(),
                prunable,
            })
            .collect()
    }

    /// Sparsity over the prunable matrices.
    pub fn sparsity(&self) -> f64 {
        let (dense, nnz) = self
            .census()
            .iter()
            .filter(|c| c.prunable)
            .fold((0usize, 0usize), |(d, n), c| (d + c.dense(), n + c.nnz));
        if dense == 0 {
            0.0
        } else {
            1.0 - nnz as f64 / dense as f64
        }
    }

    /// True when every matrix satisfies `Msk = 0 ⇒ W = 0`.
    pub fn masks_consistent(&self) -> bool {
        self.matrices().iter().all(|m| m.is_consistent())
    }

    /// Pre-softmax logits for one instance.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        instance: InstanceView<'_>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Array1<f64>> {
        match (self, instance) {
            (Model::Server(net), InstanceView::Flat(x)) => {
                let mut a = x.to_owned();
                for layer in &net.layers {
                    a = sc_forward(layer, a.view(), mode, rng)?;
                }
                Ok(a)
            }
            (Model::Edge(net), InstanceView::Sequence(seq)) => {
                if seq.ncols() != net.cell.input_width() {
                    return Err(Error::shape(
                        "edge input step width",
                        net.cell.input_width(),
                        seq.ncols(),
                    ));
                }
                let h = hlstm_unroll(&net.cell, seq, mode, rng)?;
                masked_linear(&net.head.weights, net.head.bias.view(), h.view())
            }
            (model, instance) => Err(Error::shape(
                "model input",
                match model.kind() {
                    ModelKind::Server => "flat vector",
                    ModelKind::Edge => "step sequence",
                },
                match instance {
                    InstanceView::Flat(_) => "flat vector",
                    InstanceView::Sequence(_) => "step sequence",
                },
            )),
        }
    }
}

/// Server: layer order. Edge: `f,i,o,g` gates (hidden then projection), then
/// the head.
impl Parameters for Model {
    fn matrices(&self) -> Vec<&MaskedMatrix> {
        match self {
            Model::Server(net) => net.layers.iter().map(|l| &l.weights).collect(),
            Model::Edge(net) => {
                let mut v: Vec<&MaskedMatrix> = net
                    .cell
                    .gates
                    .iter()
                    .flat_map(|g| [&g.hidden, &g.proj])
                    .collect();
                v.push(&net.head.weights);
                v
            }
        }
    }

    fn matrices_mut(&mut self) -> Vec<&mut MaskedMatrix> {
        match self {
            Model::Server(net) => net.layers.iter_mut().map(|l| &mut l.weights).collect(),
            Model::Edge(net) => {
                let mut v: Vec<&mut MaskedMatrix> = net
                    .cell
                    .gates
                    .iter_mut()
                    .flat_map(|g| [&mut g.hidden, &mut g.proj])
                    .collect();
                v.push(&mut net.head.weights);
                v
            }
        }
    }

    fn biases(&self) -> Vec<&Array1<f64>> {
        match self {
            Model::Server(net) => net.layers.iter().map(|l| &l.bias).collect(),
            Model::Edge(net) => {
                let mut v: Vec<&Array1<f64>> = net
                    .cell
                    .gates
                    .iter()
                    .flat_map(|g| [&g.hidden_bias, &g.proj_bias])
                    .collect();
                v.push(&net.head.bias);
                v
            }
        }
    }

    fn biases_mut(&mut self) -> Vec<&mut Array1<f64>> {
        match self {
            Model::Server(net) => net.layers.iter_mut().map(|l| &mut l.bias).collect(),
            Model::Edge(net) => {
                let mut v: Vec<&mut Array1<f64>> = net
                    .cell
                    .gates
                    .iter_mut()
                    .flat_map(|g| [&mut g.hidden_bias, &mut g.proj_bias])
                    .collect();
                v.push(&mut net.head.bias);
                v
            }
        }
    }
}

/// Borrowed single instance.
#[derive(Debug, Clone, Copy)]
pub enum InstanceView<'a> {
    /// Flattened vector for server models.
    Flat(ArrayView1<'a, f64>),
    /// `T x width` step sequence for edge models.
    Sequence(ArrayView2<'a, f64>),
}

/// A batch (or whole split) of encoded instances.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    /// `n x width`
    Flat(Array2<f64>),
    /// `n x T x width`
    Sequence(Array3<f64>),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Flat(a) => a.nrows(),
            Inputs::Sequence(a) => a.len_of(Axis(0)),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn instance(&self, index: usize) -> InstanceView<'_> {
        match self {
            Inputs::Flat(a) => InstanceView::Flat(a.row(index)),
            Inputs::Sequence(a) => InstanceView::Sequence(a.index_axis(Axis(0), index)),
        }
    }

    /// Gathers the given rows into a new batch.
    pub fn select(&self, indices: &[usize]) -> Inputs {
        match self {
            Inputs::Flat(a) => Inputs::Flat(a.select(Axis(0), indices)),
            Inputs::Sequence(a) => Inputs::Sequence(a.select(Axis(0), indices)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Inputs::Flat(_) => ModelKind::Server,
            Inputs::Sequence(_) => ModelKind::Edge,
        }
    }
}

/// Encoded instances with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: Inputs,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(inputs: Inputs, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::shape("labeled set", inputs.len(), labels.len()));
        }
        Ok(LabeledSet { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            inputs: self.inputs.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::softmax_cross_entropy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_weights(model: &mut Model) {
        for m in model.matrices_mut() {
            let (r, c) = m.dim();
            *m = MaskedMatrix::empty(r, c);
        }
    }

    #[test]
    fn server_dense_weight_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = build_server(2, &mut rng).unwrap();
        let dense: usize = model.census().iter().map(|c| c.dense()).sum();
        assert_eq!(
            dense,
            3712 * 1024 + 1024 * 512 + 512 * 256 + 256 * 128 + 128 * 64 + 64 * 2
        );
        assert_eq!(dense, 4_497_536);
        assert_eq!(model.input_width(), 3712);
        let m3 = build_server(3, &mut rng).unwrap();
        assert_eq!(m3.num_classes(), 3);
        assert!(matches!(
            build_server(4, &mut rng),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn edge_dense_gate_weight_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = build_edge(2, &mut rng).unwrap();
        let gates: usize = model
            .census()
            .iter()
            .filter(|c| c.prunable)
            .map(|c| c.dense())
            .sum();
        assert_eq!(gates, 4 * (136 * 96 + 96 * 96));
        assert_eq!(gates, 89_088);
        assert!(matches!(build_edge(1, &mut rng), Err(Error::Parameter(_))));
    }

    #[test]
    fn zero_weight_models_emit_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = ServerSpec {
            input_width: 6,
            hidden_widths: vec![5, 4],
            dropout: 0.2,
        };
        let mut model = spec.build(2, &mut rng).unwrap();
        zero_weights(&mut model);
        if let Model::Server(net) = &mut model {
            net.layers.last_mut().unwrap().bias = ndarray::array![0.25, -1.5];
        }
        let x = Array1::from_elem(6, 3.0);
        let logits = model
            .forward(InstanceView::Flat(x.view()), Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(logits, ndarray::array![0.25, -1.5]);

        let spec = EdgeSpec {
            input_width: 3,
            state_width: 4,
            gate_hidden_width: 4,
            dropout: 0.0,
        };
        let mut model = spec.build(3, &mut rng).unwrap();
        zero_weights(&mut model);
        if let Model::Edge(net) = &mut model {
            net.head.bias = ndarray::array![1.0, 2.0, 3.0];
        }
        let seq = Array2::from_elem((5, 3), 0.7);
        let logits = model
            .forward(InstanceView::Sequence(seq.view()), Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(logits, ndarray::array![1.0, 2.0, 3.0]);
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ServerSpec {
            input_width: 6,
            hidden_widths: vec![3],
            dropout: 0.0,
        }
        .build(2, &mut rng)
        .unwrap();
        let seq = Array2::zeros((2, 6));
        assert!(model
            .forward(InstanceView::Sequence(seq.view()), Mode::Eval, &mut rng)
            .is_err());
        let x = Array1::zeros(5);
        assert!(model
            .forward(InstanceView::Flat(x.view()), Mode::Eval, &mut rng)
            .is_err());
    }

    #[test]
    fn softmax_shift_invariance_of_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = ServerSpec {
            input_width: 4,
            hidden_widths: vec![3],
            dropout: 0.0,
        }
        .build(3, &mut rng)
        .unwrap();
        let x = ndarray::array![0.1, 0.9, -0.3, 0.4];
        let logits = model
            .forward(InstanceView::Flat(x.view()), Mode::Eval, &mut rng)
            .unwrap();
        let shifted = &logits + 17.5;
        let (p1, _) = softmax_cross_entropy(logits.view(), 0).unwrap();
        let (p2, _) = softmax_cross_entropy(shifted.view(), 0).unwrap();
        for (a, b) in p1.iter().zip(p2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(
            crate::numerics::argmax(logits.view()),
            crate::numerics::argmax(shifted.view())
        );
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = EdgeSpec {
            input_width: 3,
            state_width: 4,
            gate_hidden_width: 5,
            dropout: 0.3,
        }
        .build(2, &mut rng)
        .unwrap();
        let seq = Array2::from_shape_fn((6, 3), |(t, j)| (t as f64 - j as f64) * 0.1);
        let a = model
            .forward(InstanceView::Sequence(seq.view()), Mode::Eval, &mut rng)
            .unwrap();
        let b = model
            .forward(InstanceView::Sequence(seq.view()), Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(a, b);
    }
}
