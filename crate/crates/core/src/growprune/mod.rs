//! Seed initialisation, gradient-based growth, magnitude-based pruning and
//! the grow-and-prune training flow.

mod ops;
mod report;
mod train;

pub use ops::{grow, prune, prune_model, seed_init};
pub use report::{EpochRecord, Phase, PruneRecord, TrainReport};
pub use train::{
    evaluate, grow_and_prune, growth_phase, pruning_phase, run_epoch, train_to_plateau, Evaluation,
    PlateauOutcome, PlateauPlan, PlateauTracker, Verdict,
};

use crate::error::{Error, Result};
use crate::model::{LabeledSet, Model};

/// Every hyperparameter of a synthesis run.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowPruneSchedule {
    pub seed_fill_rate: f64,
    pub growth_ratio: f64,
    pub growth_epochs: usize,
    pub initial_pruning_ratio: f64,
    /// Pruning stops once the ratio drops below this.
    pub pruning_ratio_floor: f64,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    /// Epochs without a new best validation accuracy tolerated before decay.
    pub plateau_patience: usize,
    /// Epoch cap for every train-to-plateau phase.
    pub max_epochs: usize,
    /// A phase ends at the first plateau after this many decays.
    pub max_lr_decays: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub momentum: f64,
    /// A prune iteration is accepted when validation accuracy recovers to
    /// within this many accuracy units (fraction, not percent) of the target.
    pub recovery_tolerance: f64,
    pub max_prune_iterations: usize,
}

impl GrowPruneSchedule {
    /// Recipe for the server classifier.
    pub fn server() -> Self {
        GrowPruneSchedule {
            seed_fill_rate: 0.2,
            growth_ratio: 0.2,
            growth_epochs: 3,
            initial_pruning_ratio: 0.2,
            pruning_ratio_floor: 0.01,
            learning_rate: 0.005,
            lr_decay_factor: 10.0,
            plateau_patience: 50,
            max_epochs: 1000,
            max_lr_decays: 2,
            batch_size: 256,
            dropout_rate: 0.2,
            momentum: 0.9,
            recovery_tolerance: 0.001,
            max_prune_iterations: 200,
        }
    }

    /// Recipe for the edge classifier.
    pub fn edge() -> Self {
        GrowPruneSchedule {
            learning_rate: 0.001,
            plateau_patience: 30,
            batch_size: 64,
            ..Self::server()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if !(self.seed_fill_rate > 0.0 && self.seed_fill_rate <= 1.0) {
            return bad(format!(
                "seed_fill_rate {} not in (0,1]",
                self.seed_fill_rate
            ));
        }
        if !(self.growth_ratio > 0.0 && self.growth_ratio < 1.0) {
            return bad(format!("growth_ratio {} not in (0,1)", self.growth_ratio));
        }
        if !(self.initial_pruning_ratio > 0.0 && self.initial_pruning_ratio < 1.0) {
            return bad(format!(
                "initial_pruning_ratio {} not in (0,1)",
                self.initial_pruning_ratio
            ));
        }
        if !(self.pruning_ratio_floor > 0.0) {
            return bad("pruning_ratio_floor must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay_factor > 0.0) {
            return bad("learning_rate and lr_decay_factor must be positive".into());
        }
        if self.plateau_patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("plateau_patience, batch_size and max_epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} not in [0,1)", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} not in [0,1)", self.momentum));
        }
        if !(self.recovery_tolerance >= 0.0) {
            return bad("recovery_tolerance must be non-negative".into());
        }
        Ok(())
    }

    pub fn plateau_plan(&self) -> PlateauPlan {
        PlateauPlan {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            lr_decay_factor: self.lr_decay_factor,
            patience: self.plateau_patience,
            max_epochs: self.max_epochs,
            max_lr_decays: self.max_lr_decays,
            batch_size: self.batch_size,
        }
    }
}

/// Training and validation splits.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: LabeledSet,
    pub val: LabeledSet,
}

impl TrainData {
    pub fn new(train: LabeledSet, val: LabeledSet) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Data(
                "training and validation splits must be non-empty".into(),
            ));
        }
        Ok(TrainData { train, val })
    }
}

/// Hooks called during synthesis. All methods default to no-ops.
pub trait Observer {
    /// After every SGD step.
    fn after_step(&mut self, _model: &Model) {}
    /// After `grow` has been applied to every matrix.
    fn after_grow(&mut self, _before: &Model, _after: &Model) {}
    /// After `prune` has been applied to every matrix.
    fn after_prune(&mut self, _before: &Model, _after: &Model) {}
    fn after_epoch(&mut self, _record: &EpochRecord) {}
}

/// Observer that does nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl Observer for NoObserver {}
