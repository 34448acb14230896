//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "SPNETMDL"
//! version      u16
//! kind         u8       0 = feed-forward, 1 = recurrent
//! classes      u8
//! metadata     u32 count, then (u32 len, utf-8 key, u32 len, utf-8 value) pairs
//! matrices     u32 count, then per matrix:
//!                u32 rows, u32 cols, u8 activation, f64 dropout, u64 nnz
//! per matrix   bit-packed row-major mask (least significant bit first),
//!              nnz f64 values of the set bits in row-major order,
//!              rows f64 bias values
//! scaler       u32 channels, then channels f64 minima and channels f64 maxima
//! ```
//!
//! Matrices follow the model's parameter order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::datapipe::Scaler;
use crate::error::{Error, Result};
use crate::model::{EdgeNet, Gate, HlstmCell, Model, ModelKind, ScLayer, ServerNet};
use crate::numerics::{Activation, MaskedMatrix, Parameters};

pub const MAGIC: &[u8; 8] = b"SPNETMDL";
pub const FORMAT_VERSION: u16 = 1;

/// A trained model with the scaler fitted on its training data and free-form
/// metadata (e.g. the seed that produced the data split).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: Model,
    pub scaler: Scaler,
    pub metadata: Vec<(String, String)>,
}

impl ModelFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

struct MatrixHeader {
    rows: usize,
    cols: usize,
    activation: Activation,
    dropout: f64,
    nnz: usize,
}

/// Activation and dropout attached to each matrix, in parameter order.
fn layer_table(model: &Model) -> Vec<(Activation, f64)> {
    match model {
        Model::Server(net) => net
            .layers
            .iter()
            .map(|l| (l.activation, l.dropout_rate))
            .collect(),
        Model::Edge(net) => {
            let rate = net.cell.dropout_rate;
            let mut v: Vec<(Activation, f64)> = (0..4)
                .flat_map(|g| {
                    let gate_act = if g == 3 {
                        Activation::Tanh
                    } else {
                        Activation::Sigmoid
                    };
                    [(Activation::Relu, rate), (gate_act, rate)]
                })
                .collect();
            v.push((net.head.activation, net.head.dropout_rate));
            v
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

/// Serialises a model file.
pub fn encode_model(file: &ModelFile) -> Vec<u8> {
    let model = &file.model;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(match model.kind() {
        ModelKind::Server => 0,
        ModelKind::Edge => 1,
    });
    out.push(model.num_classes() as u8);

    put_u32(&mut out, file.metadata.len());
    for (k, v) in &file.metadata {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }

    let matrices = model.matrices();
    let table = layer_table(model);
    put_u32(&mut out, matrices.len());
    for (m, (act, rate)) in matrices.iter().zip(&table) {
        put_u32(&mut out, m.rows());
        put_u32(&mut out, m.cols());
        out.push(act.code());
        put_f64(&mut out, *rate);
        out.extend_from_slice(&(m.nnz() as u64).to_le_bytes());
    }
    for (m, bias) in matrices.iter().zip(model.biases()) {
        let mut bits = vec![0u8; m.len().div_ceil(8)];
        for (i, &on) in m.mask().iter().enumerate() {
            if on {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
        for (&v, &on) in m.values().iter().zip(m.mask()) {
            if on {
                put_f64(&mut out, v);
            }
        }
        for &b in bias {
            put_f64(&mut out, b);
        }
    }

    put_u32(&mut out, file.scaler.mins.len());
    for &v in file.scaler.mins.iter().chain(&file.scaler.maxs) {
        put_f64(&mut out, v);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::Corrupt(format!("{what} length overflows")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::Corrupt(format!("{what} is not valid UTF-8")))
    }
}

/// Parses a model file produced by [`encode_model`].
pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a model file (bad magic bytes)".into()));
    }
    r.pos = MAGIC.len();
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let kind = match r.u8("model kind")? {
        0 => ModelKind::Server,
        1 => ModelKind::Edge,
        other => return Err(Error::Format(format!("unknown model kind code {other}"))),
    };
    let classes = r.u8("class count")? as usize;

    let meta_count = r.u32("metadata count")?;
    let mut metadata = Vec::new();
    for _ in 0..meta_count {
        let k = r.string("metadata key")?;
        let v = r.string("metadata value")?;
        metadata.push((k, v));
    }

    let count = r.u32("matrix count")?;
    let mut headers = Vec::new();
    for _ in 0..count {
        let rows = r.u32("matrix rows")?;
        let cols = r.u32("matrix cols")?;
        let code = r.u8("activation")?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| Error::Format(format!("unknown activation code {code}")))?;
        let dropout = r.f64("dropout")?;
        let nnz = r.u64("nnz")? as usize;
        if nnz > rows.saturating_mul(cols) {
            return Err(Error::Corrupt(format!(
                "nnz {nnz} exceeds {rows}x{cols} matrix"
            )));
        }
        headers.push(MatrixHeader {
            rows,
            cols,
            activation,
            dropout,
            nnz,
        });
    }

    let mut matrices = Vec::with_capacity(count);
    let mut biases = Vec::with_capacity(count);
    for (i, h) in headers.iter().enumerate() {
        let len = h.rows * h.cols;
        let bits = r.take(len.div_ceil(8), "mask bitmap")?;
        let popcount: usize = bits.iter().map(|b| b.count_ones() as usize).sum();
        if popcount != h.nnz {
            return Err(Error::Corrupt(format!(
                "matrix {i}: mask has {popcount} set bits but header records {}",
                h.nnz
            )));
        }
        if len % 8 != 0 && bits[len / 8] >> (len % 8) != 0 {
            return Err(Error::Corrupt(format!(
                "matrix {i}: mask padding bits are set"
            )));
        }
        let nonzero = r.f64s(h.nnz, "matrix values")?;
        let mut mask = Array2::from_elem((h.rows, h.cols), false);
        let mut values = Array2::zeros((h.rows, h.cols));
        let mut next = nonzero.into_iter();
        for (idx, (m, v)) in mask.iter_mut().zip(values.iter_mut()).enumerate() {
            if bits[idx / 8] >> (idx % 8) & 1 == 1 {
                *m = true;
                *v = next.next().expect("popcount checked");
            }
        }
        matrices.push(MaskedMatrix::new(values, mask)?);
        biases.push(Array1::from(r.f64s(h.rows, "bias")?));
    }

    let channels = r.u32("scaler channel count")?;
    let mins = r.f64s(channels, "scaler minima")?;
    let maxs = r.f64s(channels, "scaler maxima")?;
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} unexpected trailing bytes",
            bytes.len() - r.pos
        )));
    }

    let model = assemble(kind, &headers, matrices, biases).map_err(|e| match e {
        Error::Shape { .. } | Error::Parameter(_) => Error::Corrupt(e.to_string()),
        other => other,
    })?;
    if model.num_classes() != classes {
        return Err(Error::Corrupt(format!(
            "header records {classes} classes but the output layer has {}",
            model.num_classes()
        )));
    }
    let file = ModelFile {
        model,
        scaler: Scaler { mins, maxs },
        metadata,
    };
    if layer_table(&file.model)
        .iter()
        .zip(&headers)
        .any(|((a, _), h)| *a != h.activation)
    {
        return Err(Error::Corrupt(
            "activation table does not match the architecture".into(),
        ));
    }
    Ok(file)
}

fn assemble(
    kind: ModelKind,
    headers: &[MatrixHeader],
    matrices: Vec<MaskedMatrix>,
    biases: Vec<Array1<f64>>,
) -> Result<Model> {
    match kind {
        ModelKind::Server => {
            if matrices.is_empty() {
                return Err(Error::Corrupt("feed-forward model has no layers".into()));
            }
            let layers = matrices
                .into_iter()
                .zip(biases)
                .zip(headers)
                .map(|((w, b), h)| ScLayer::new(w, b, h.activation, h.dropout))
                .collect::<Result<Vec<_>>>()?;
            for pair in layers.windows(2) {
                if pair[0].out_width() != pair[1].in_width() {
                    return Err(Error::shape(
                        "layer chain",
                        pair[0].out_width(),
                        pair[1].in_width(),
                    ));
                }
            }
            Ok(Model::Server(ServerNet { layers }))
        }
        ModelKind::Edge => {
            if matrices.len() != 9 {
                return Err(Error::shape(
                    "recurrent model matrix count",
                    9,
                    matrices.len(),
                ));
            }
            let mut mats = matrices.into_iter();
            let mut bs = biases.into_iter();
            let mut gate = || Gate {
                hidden: mats.next().unwrap(),
                hidden_bias: bs.next().unwrap(),
                proj: mats.next().unwrap(),
                proj_bias: bs.next().unwrap(),
            };
            let gates = [gate(), gate(), gate(), gate()];
            let (head_w, head_b) = (mats.next().unwrap(), bs.next().unwrap());
            let state = gates[0].proj.rows();
            let joint = gates[0].hidden.cols();
            if joint < state {
                return Err(Error::shape(
                    "gate input width",
                    format!(">= {state}"),
                    joint,
                ));
            }
            let cell = HlstmCell::new(joint - state, state, gates, headers[0].dropout)?;
            if head_w.cols() != state {
                return Err(Error::shape("head input width", state, head_w.cols()));
            }
            let head = ScLayer::new(head_w, head_b, headers[8].activation, headers[8].dropout)?;
            Ok(Model::Edge(EdgeNet { cell, head }))
        }
    }
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    fs::write(path, encode_model(file)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
