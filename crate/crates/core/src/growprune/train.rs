use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use super::ops::{grow, prune_model};
use super::report::{EpochRecord, Phase, PruneRecord, TrainReport};
use super::{GrowPruneSchedule, Observer, TrainData};
use crate::error::{Error, Result};
use crate::model::{predict_logits, LabeledSet, Mode, Model, Recorder};
use crate::numerics::{argmax, sgd_step, softmax_cross_entropy, GradientBuffer, OptimizerState};

/// Eval-mode loss, accuracy and predictions over a labelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

pub fn evaluate(model: &Model, set: &LabeledSet) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let logits = predict_logits(model, &set.inputs)?;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut predictions = Vec::with_capacity(set.len());
    for (row, &label) in logits.rows().into_iter().zip(&set.labels) {
        loss += softmax_cross_entropy(row, label)?.1;
        let p = argmax(row);
        if p == label {
            correct += 1;
        }
        predictions.push(p);
    }
    let n = set.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        predictions,
    })
}

/// One shuffled pass of mini-batch SGD. When `accumulate` is given, every
/// batch's summed gradients are added to it. Returns mean training loss and
/// accuracy (train mode, i.e. with dropout).
pub fn run_epoch<R: Rng + ?Sized>(
    model: &mut Model,
    set: &LabeledSet,
    opt: &mut OptimizerState,
    batch_size: usize,
    rng: &mut R,
    mut accumulate: Option<&mut GradientBuffer>,
    observer: &mut dyn Observer,
) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::Data("cannot train on an empty split".into()));
    }
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(rng);
    let mut recorder = Recorder::new();
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for chunk in order.chunks(batch_size) {
        let batch = set.select(chunk);
        recorder.forward(model, &batch.inputs, Mode::Train, rng)?;
        let back = recorder.backward(model, &batch.labels)?;
        loss_sum += back.loss * chunk.len() as f64;
        correct += back.correct;
        if let Some(acc) = accumulate.as_deref_mut() {
            acc.accumulate(&back.grads)?;
        }
        sgd_step(model, &back.grads, opt)?;
        observer.after_step(model);
    }
    let n = set.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Decision taken after one epoch's validation accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stale,
    /// Divide the learning rate and keep going.
    Decay,
    /// Plateau reached with no decays left.
    Stop,
}

/// Reduce-on-plateau bookkeeping: after more than `patience` consecutive
/// epochs without a strictly better validation accuracy, decay (or stop
/// once `max_decays` decays have been spent).
#[derive(Debug, Clone)]
pub struct PlateauTracker {
    best: f64,
    bad_epochs: usize,
    patience: usize,
    decays: usize,
    max_decays: usize,
}

impl PlateauTracker {
    pub fn new(baseline: f64, patience: usize, max_decays: usize) -> Self {
        PlateauTracker {
            best: baseline,
            bad_epochs: 0,
            patience,
            decays: 0,
            max_decays,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    pub fn observe(&mut self, accuracy: f64) -> Verdict {
        if accuracy > self.best {
            self.best = accuracy;
            self.bad_epochs = 0;
            return Verdict::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs <= self.patience {
            return Verdict::Stale;
        }
        self.bad_epochs = 0;
        if self.decays >= self.max_decays {
            Verdict::Stop
        } else {
            self.decays += 1;
            Verdict::Decay
        }
    }
}

/// Settings for one train-to-plateau phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauPlan {
    pub learning_rate: f64,
    pub momentum: f64,
    pub lr_decay_factor: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub max_lr_decays: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauOutcome {
    /// Validation accuracy of the returned (best) weights.
    pub best_val_accuracy: f64,
    pub epochs: usize,
    pub decays: usize,
    pub final_learning_rate: f64,
}

/// Mini-batch SGD until the validation accuracy plateaus. The learning rate
/// is divided by `lr_decay_factor` at each plateau; on return `model` holds
/// the weights of the best validation epoch (the incoming weights count as
/// epoch zero).
pub fn train_to_plateau<R: Rng + ?Sized>(
    model: &mut Model,
    data: &TrainData,
    plan: &PlateauPlan,
    phase: Phase,
    rng: &mut R,
    report: &mut TrainReport,
    observer: &mut dyn Observer,
) -> Result<PlateauOutcome> {
    let mut opt = OptimizerState::new(plan.learning_rate, plan.momentum)?;
    let baseline = evaluate(model, &data.val)?;
    let mut tracker = PlateauTracker::new(baseline.accuracy, plan.patience, plan.max_lr_decays);
    let mut best_model = model.clone();
    let mut epochs = 0;

    while epochs < plan.max_epochs {
        let started = Instant::now();
        let (train_loss, train_accuracy) = run_epoch(
            model,
            &data.train,
            &mut opt,
            plan.batch_size,
            rng,
            None,
            observer,
        )?;
        let val = evaluate(model, &data.val)?;
        epochs += 1;
        let record = EpochRecord {
            epoch: report.last_epoch() + 1,
            phase,
            train_loss,
            train_accuracy,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            sparsity: model.sparsity(),
            learning_rate: opt.learning_rate(),
            wall_ms: started.elapsed().as_millis(),
        };
        observer.after_epoch(&record);
        report.epochs.push(record);

        match tracker.observe(val.accuracy) {
            Verdict::Improved => best_model.clone_from(model),
            Verdict::Stale => {}
            Verdict::Decay => opt.set_learning_rate(opt.learning_rate() / plan.lr_decay_factor)?,
            Verdict::Stop => break,
        }
    }
    *model = best_model;
    Ok(PlateauOutcome {
        best_val_accuracy: tracker.best(),
        epochs,
        decays: tracker.decays(),
        final_learning_rate: opt.learning_rate(),
    })
}

/// Growth: each epoch trains normally while accumulating gradients, then
/// grows every prunable matrix from the epoch-average gradient.
pub fn growth_phase<R: Rng + ?Sized>(
    model: &mut Model,
    data: &TrainData,
    sched: &GrowPruneSchedule,
    rng: &mut R,
    report: &mut TrainReport,
    observer: &mut dyn Observer,
) -> Result<()> {
    sched.validate()?;
    let mut opt = OptimizerState::new(sched.learning_rate, sched.momentum)?;
    let prunable = model.prunable();
    for _ in 0..sched.growth_epochs {
        let started = Instant::now();
        let mut accumulated = GradientBuffer::zeros_like(model);
        let (train_loss, train_accuracy) = run_epoch(
            model,
            &data.train,
            &mut opt,
            sched.batch_size,
            rng,
            Some(&mut accumulated),
            observer,
        )?;
        let before = model.clone();
        {
            use crate::numerics::Parameters;
            for (k, (matrix, &p)) in model.matrices_mut().into_iter().zip(&prunable).enumerate() {
                if p {
                    let avg = accumulated.mean_matrix(k)?;
                    grow(matrix, avg.view(), sched.growth_ratio, opt.learning_rate())?;
                }
            }
        }
        observer.after_grow(&before, model);
        let val = evaluate(model, &data.val)?;
        let record = EpochRecord {
            epoch: report.last_epoch() + 1,
            phase: Phase::Growth,
            train_loss,
            train_accuracy,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            sparsity: model.sparsity(),
            learning_rate: opt.learning_rate(),
            wall_ms: started.elapsed().as_millis(),
        };
        observer.after_epoch(&record);
        report.epochs.push(record);
    }
    Ok(())
}

/// Trains to plateau, then prunes iteratively: each iteration prunes every
/// prunable matrix at the current ratio and retrains. An iteration is kept
/// when validation accuracy recovers to within `recovery_tolerance` of the
/// best accuracy seen so far; otherwise the pre-prune weights are restored
/// and the ratio halved. Stops once the ratio falls below the floor.
pub fn pruning_phase<R: Rng + ?Sized>(
    model: &mut Model,
    data: &TrainData,
    sched: &GrowPruneSchedule,
    rng: &mut R,
    report: &mut TrainReport,
    observer: &mut dyn Observer,
) -> Result<()> {
    sched.validate()?;
    let plan = sched.plateau_plan();
    let outcome = train_to_plateau(model, data, &plan, Phase::Train, rng, report, observer)?;
    let mut target = outcome.best_val_accuracy;
    report.peak_val_accuracy = Some(target);

    let mut ratio = sched.initial_pruning_ratio;
    let mut iteration = 0;
    while ratio >= sched.pruning_ratio_floor && iteration < sched.max_prune_iterations {
        iteration += 1;
        let checkpoint = model.clone();
        let sparsity_before = model.sparsity();
        let removed = prune_model(model, ratio)?;
        observer.after_prune(&checkpoint, model);
        let sparsity_after = model.sparsity();

        let (val_accuracy, accepted) = if removed == 0 {
            (target, false)
        } else {
            let retrained = train_to_plateau(
                model,
                data,
                &plan,
                Phase::Retrain(iteration),
                rng,
                report,
                observer,
            )?;
            let acc = retrained.best_val_accuracy;
            (acc, acc >= target - sched.recovery_tolerance)
        };
        report.prunes.push(PruneRecord {
            iteration,
            pruning_ratio: ratio,
            removed,
            sparsity_before,
            sparsity_after,
            val_accuracy,
            target_accuracy: target,
            accepted,
        });
        if accepted {
            target = target.max(val_accuracy);
        } else {
            *model = checkpoint;
            ratio /= 2.0;
        }
    }
    report.final_val_accuracy = Some(evaluate(model, &data.val)?.accuracy);
    report.final_census = model.census();
    Ok(())
}

/// Full synthesis: growth phase, train to plateau, iterative pruning.
/// `model` must already be seed-initialised.
pub fn grow_and_prune<R: Rng + ?Sized>(
    model: &mut Model,
    data: &TrainData,
    sched: &GrowPruneSchedule,
    rng: &mut R,
    observer: &mut dyn Observer,
) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    growth_phase(model, data, sched, rng, &mut report, observer)?;
    pruning_phase(model, data, sched, rng, &mut report, observer)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strictly_increasing_accuracy_never_decays() {
        let mut t = PlateauTracker::new(0.0, 3, 10);
        for i in 1..=50 {
            assert_eq!(t.observe(i as f64 / 100.0), Verdict::Improved);
        }
        assert_eq!(t.decays(), 0);
    }

    #[test]
    fn constant_accuracy_decays_every_patience_plus_one_epochs() {
        let mut t = PlateauTracker::new(0.5, 3, 10);
        let decay_epochs: Vec<usize> = (1..=12)
            .filter(|_| t.observe(0.5) == Verdict::Decay)
            .collect();
        assert_eq!(decay_epochs, vec![4, 8, 12]);
    }

    #[test]
    fn stops_after_decay_budget() {
        let mut t = PlateauTracker::new(0.5, 1, 1);
        let verdicts: Vec<Verdict> = (0..4).map(|_| t.observe(0.5)).collect();
        assert_eq!(
            verdicts,
            vec![
                Verdict::Stale,
                Verdict::Decay,
                Verdict::Stale,
                Verdict::Stop
            ]
        );
    }
}
