//! Confusion matrices, classification metrics, and parameter and FLOP
//! accounting.

use crate::error::{Error, Result};
use crate::model::{MatrixCensus, Model, ModelKind};

/// Steps per window in the per-step encoding.
pub const DEFAULT_SEQUENCE_LENGTH: usize = 60;
/// Class index of healthy subjects in the three-class task.
pub const HEALTHY_CLASS: usize = 2;

/// Rows are true labels, columns are predictions. In the binary task class
/// 0 is diabetic (positive) and class 1 healthy (negative).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if let Some(row) = counts.iter().find(|r| r.len() != k) {
            return Err(Error::shape("confusion matrix row", k, row.len()));
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }
}

/// Tallies `(label, prediction)` pairs over `k` classes.
pub fn confusion(predictions: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("predictions", labels.len(), predictions.len()));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &l) in predictions.iter().zip(labels) {
        for idx in [p, l] {
            if idx >= k {
                return Err(Error::Index {
                    index: idx,
                    limit: k,
                });
            }
        }
        counts[l][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Binary metrics as fractions; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    pub accuracy: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub f1: Option<f64>,
}

pub fn binary_metrics(cm: &ConfusionMatrix) -> Result<BinaryMetrics> {
    if cm.classes() != 2 {
        return Err(Error::shape("binary confusion matrix", 2, cm.classes()));
    }
    let (tp, fn_, fp, tn) = (cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1));
    Ok(BinaryMetrics {
        accuracy: ratio(tp + tn, cm.total()),
        fpr: ratio(fp, tn + fp),
        fnr: ratio(fn_, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    })
}

/// Three-class metrics as fractions; `fnr[c]` is `None` for the healthy
/// class and for classes without instances.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassMetrics {
    pub accuracy: Option<f64>,
    pub healthy_fpr: Option<f64>,
    pub fnr: Vec<Option<f64>>,
}

pub fn multiclass_metrics(cm: &ConfusionMatrix, healthy: usize) -> Result<MulticlassMetrics> {
    if healthy >= cm.classes() {
        return Err(Error::Index {
            index: healthy,
            limit: cm.classes(),
        });
    }
    let missed = |c: usize| cm.row_total(c) - cm.get(c, c);
    Ok(MulticlassMetrics {
        accuracy: ratio(cm.trace(), cm.total()),
        healthy_fpr: ratio(missed(healthy), cm.row_total(healthy)),
        fnr: (0..cm.classes())
            .map(|c| {
                if c == healthy {
                    None
                } else {
                    ratio(missed(c), cm.row_total(c))
                }
            })
            .collect(),
    })
}

/// A fraction as a percentage with one decimal, rounding half away from zero.
pub fn percent1(fraction: f64) -> f64 {
    // Round at 1e-9 above the raw value to absorb representation error at
    // exact halves such as 0.0125.
    let scaled = fraction * 1000.0;
    let nudged = scaled + scaled.signum() * 1e-9;
    nudged.round() / 10.0
}

/// Formats an optional fraction as a one-decimal percentage, `undefined`
/// when absent.
pub fn format_percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.1}", percent1(v)),
        None => "undefined".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub dense: usize,
    pub nnz: usize,
    /// Whether the matrix enters the model totals.
    pub counted: bool,
}

impl LayerCost {
    pub fn sparsity(&self) -> f64 {
        if self.dense == 0 {
            0.0
        } else {
            1.0 - self.nnz as f64 / self.dense as f64
        }
    }
}

/// Weight counts and inference cost. Biases and the recurrent model's
/// classifier head are excluded from `dense`/`nnz`; `flops` counts two
/// operations per nonzero weight per application.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub kind: ModelKind,
    pub layers: Vec<LayerCost>,
    pub dense: usize,
    pub nnz: usize,
    pub sequence_length: usize,
    pub flops: u64,
}

impl CostReport {
    pub fn sparsity(&self) -> f64 {
        if self.dense == 0 {
            0.0
        } else {
            1.0 - self.nnz as f64 / self.dense as f64
        }
    }
}

fn layer_costs(census: Vec<MatrixCensus>) -> Vec<LayerCost> {
    census
        .into_iter()
        .map(|c| LayerCost {
            dense: c.dense(),
            name: c.name,
            rows: c.rows,
            cols: c.cols,
            nnz: c.nnz,
            counted: c.prunable,
        })
        .collect()
}

/// Cost report with the canonical sequence length.
pub fn count_params(model: &Model) -> CostReport {
    count_flops(model, DEFAULT_SEQUENCE_LENGTH)
}

/// Cost report for `sequence_length` recurrent steps (ignored for the
/// feed-forward model).
pub fn count_flops(model: &Model, sequence_length: usize) -> CostReport {
    let layers = layer_costs(model.census());
    let counted = layers.iter().filter(|l| l.counted);
    let dense = counted.clone().map(|l| l.dense).sum();
    let nnz: usize = counted.map(|l| l.nnz).sum();
    let once: usize = layers.iter().filter(|l| !l.counted).map(|l| l.nnz).sum();
    let kind = model.kind();
    let flops = match kind {
        ModelKind::Server => 2 * nnz as u64,
        ModelKind::Edge => sequence_length as u64 * 2 * nnz as u64 + 2 * once as u64,
    };
    CostReport {
        kind,
        layers,
        dense,
        nnz,
        sequence_length: if kind == ModelKind::Edge {
            sequence_length
        } else {
            1
        },
        flops,
    }
}
