use std::fmt::Write as _;

use crate::model::MatrixCensus;

/// Which part of the synthesis flow an epoch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Growth,
    Train,
    /// Retraining after pruning iteration `n` (1-based).
    Retrain(usize),
}

impl Phase {
    pub fn label(&self) -> String {
        match self {
            Phase::Growth => "growth".into(),
            Phase::Train => "train".into(),
            Phase::Retrain(n) => format!("retrain{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Global epoch counter across all phases, starting at 1.
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub sparsity: f64,
    pub learning_rate: f64,
    pub wall_ms: u128,
}

/// Outcome of one pruning iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneRecord {
    pub iteration: usize,
    pub pruning_ratio: f64,
    pub removed: usize,
    pub sparsity_before: f64,
    pub sparsity_after: f64,
    pub val_accuracy: f64,
    pub target_accuracy: f64,
    pub accepted: bool,
}

/// Training curves, sparsity trajectory and final census of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub prunes: Vec<PruneRecord>,
    /// Best validation accuracy before any pruning.
    pub peak_val_accuracy: Option<f64>,
    /// Validation accuracy of the returned model.
    pub final_val_accuracy: Option<f64>,
    pub final_census: Vec<MatrixCensus>,
    /// Extra `name,value` summary lines (e.g. test metrics) appended by callers.
    pub summary: Vec<(String, String)>,
}

impl TrainReport {
    pub fn last_epoch(&self) -> usize {
        self.epochs.last().map_or(0, |e| e.epoch)
    }

    pub fn final_sparsity(&self) -> f64 {
        let (dense, nnz) = self
            .final_census
            .iter()
            .filter(|c| c.prunable)
            .fold((0, 0), |(d, n), c| (d + c.dense(), n + c.nnz));
        if dense == 0 {
            0.0
        } else {
            1.0 - nnz as f64 / dense as f64
        }
    }

    /// Deterministic CSV: one section per table, no wall-clock values.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("epoch,phase,train_loss,train_acc,val_loss,val_acc,sparsity,lr\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                e.epoch,
                e.phase.label(),
                e.train_loss,
                e.train_accuracy,
                e.val_loss,
                e.val_accuracy,
                e.sparsity,
                e.learning_rate
            );
        }
        out.push_str(
            "\niteration,beta,removed,sparsity_before,sparsity_after,val_acc,target_acc,accepted\n",
        );
        for p in &self.prunes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                p.iteration,
                p.pruning_ratio,
                p.removed,
                p.sparsity_before,
                p.sparsity_after,
                p.val_accuracy,
                p.target_accuracy,
                p.accepted
            );
        }
        out.push_str("\nmatrix,rows,cols,nnz,prunable\n");
        for c in &self.final_census {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.name, c.rows, c.cols, c.nnz, c.prunable
            );
        }
        out.push_str("\nname,value\n");
        if let Some(v) = self.peak_val_accuracy {
            let _ = writeln!(out, "peak_val_acc,{v}");
        }
        if let Some(v) = self.final_val_accuracy {
            let _ = writeln!(out, "final_val_acc,{v}");
        }
        let _ = writeln!(out, "final_sparsity,{}", self.final_sparsity());
        for (k, v) in &self.summary {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,wall_ms\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{}", e.epoch, e.wall_ms);
        }
        out
    }
}
