//! Minibatch SGD with plateau-driven learning-rate halving, early stopping
//! and best-validation snapshots.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax_rows, rng_from_seed, softmax_xent, Model, NnError, Rng};
use crate::data::TimeSeriesDataset;
use crate::metrics::weighted_f1;
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_halving_patience: usize,
    pub early_stop_patience: usize,
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.01,
            lr_halving_patience: 5,
            early_stop_patience: 10,
            min_lr: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so that frozen runs are expressible.
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.min_lr > 0.0 && self.min_lr.is_finite()) {
            return bad("min_lr must be positive");
        }
        if !(self.learning_rate == 0.0 || self.learning_rate > self.min_lr) || !self.learning_rate.is_finite() {
            return bad("learning_rate must exceed min_lr (or be exactly 0)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean training loss over the epoch's minibatches (training mode).
    pub train_loss: f64,
    /// Weighted F1 of the training-mode predictions made during the epoch.
    pub train_f1: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the lowest validation loss.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// Optimizer steps actually executed, including those after the best epoch.
    pub steps: u64,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn best_record(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }
}

/// Produces the averaged update direction for one minibatch.
pub trait GradientStep {
    /// `step` is the global step index (0-based); `rng` is the training
    /// stream, also used for dropout.
    fn compute(
        &mut self,
        model: &Model,
        batch: &Tensor,
        labels: &[usize],
        step: u64,
        rng: &mut Rng,
    ) -> Result<StepOutput, NnError>;
}

pub struct StepOutput {
    pub grads: ParamSet,
    pub loss_sum: f64,
    pub preds: Vec<usize>,
}

/// Gradient of the mean minibatch loss.
pub struct PlainGradient;

impl GradientStep for PlainGradient {
    fn compute(
        &mut self,
        model: &Model,
        batch: &Tensor,
        labels: &[usize],
        _: u64,
        rng: &mut Rng,
    ) -> Result<StepOutput, NnError> {
        let gs = model.grad_sum(batch, labels, Some(rng))?;
        let mut grads = gs.grads;
        grads.scale(1.0 / labels.len() as f64);
        Ok(StepOutput { grads, loss_sum: gs.loss_sum, preds: argmax_rows(&gs.logits) })
    }
}

/// Aggregate statistics of one pass over a training set.
#[derive(Debug, Clone, Default)]
pub struct EpochStats {
    pub loss_sum: f64,
    pub labels: Vec<usize>,
    pub preds: Vec<usize>,
    pub steps: u64,
}

impl EpochStats {
    pub fn merge(&mut self, other: EpochStats) {
        self.loss_sum += other.loss_sum;
        self.labels.extend(other.labels);
        self.preds.extend(other.preds);
        self.steps += other.steps;
    }
}

/// One shuffled pass of SGD over `data`. `step` is advanced per minibatch.
pub fn run_epoch(
    model: &mut Model,
    data: &TimeSeriesDataset,
    batch_size: usize,
    lr: f64,
    rng: &mut Rng,
    step: &mut u64,
    grad: &mut dyn GradientStep,
) -> Result<EpochStats, NnError> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut stats = EpochStats::default();
    for chunk in order.chunks(batch_size) {
        let batch = data.batch(chunk);
        let labels = data.labels_of(chunk);
        let out = grad.compute(model, &batch, &labels, *step, rng)?;
        model.params.axpy(-lr, &out.grads);
        stats.loss_sum += out.loss_sum;
        stats.labels.extend_from_slice(&labels);
        stats.preds.extend(out.preds);
        stats.steps += 1;
        *step += 1;
    }
    Ok(stats)
}

/// Inference-mode mean loss, weighted F1 and predictions on a dataset.
pub fn evaluate(model: &Model, data: &TimeSeriesDataset) -> Result<(f64, f64, Vec<usize>), NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let logits = model.forward(&data.samples())?;
    let loss = softmax_xent(&logits, &data.labels).loss_sum / data.len() as f64;
    let preds = argmax_rows(&logits);
    let f1 = weighted_f1(&data.labels, &preds, model.spec.num_classes).unwrap_or(0.0);
    Ok((loss, f1, preds))
}

/// Schedule shared by every training flavour: `epoch_fn` performs one
/// epoch (or federated round) at the given learning rate and reports the
/// pooled training statistics.
pub fn train_loop<F>(
    mut model: Model,
    val: &TimeSeriesDataset,
    config: &TrainConfig,
    mut epoch_fn: F,
) -> Result<TrainOutcome, NnError>
where
    F: FnMut(&mut Model, f64, usize) -> Result<EpochStats, NnError>,
{
    config.validate()?;
    if val.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut lr = config.learning_rate;
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut since_best = 0;
    let mut since_halving = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let stats = epoch_fn(&mut model, lr, epoch)?;
        steps += stats.steps;
        let seen = stats.labels.len().max(1) as f64;
        let train_f1 = weighted_f1(&stats.labels, &stats.preds, model.spec.num_classes).unwrap_or(0.0);
        let (val_loss, val_f1, _) = evaluate(&model, val)?;
        history.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: stats.loss_sum / seen,
            train_f1,
            val_loss,
            val_f1,
        });
        log::debug!("epoch {epoch}: lr {lr:.2e} train {:.4} val {val_loss:.4} f1 {val_f1:.4}", stats.loss_sum / seen);

        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.params.clone()));
            since_best = 0;
            since_halving = 0;
        } else {
            since_best += 1;
            since_halving += 1;
            if since_halving >= config.lr_halving_patience {
                lr = (lr / 2.0).max(config.min_lr).min(lr);
                since_halving = 0;
            }
            if since_best >= config.early_stop_patience {
                stopped_early = epoch + 1 < config.epochs;
                break;
            }
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome { model, history, steps, best_epoch, stopped_early })
}

/// Trains with any per-minibatch gradient rule on a single dataset.
pub fn train_with(
    model: Model,
    train_set: &TimeSeriesDataset,
    val: &TimeSeriesDataset,
    config: &TrainConfig,
    grad: &mut dyn GradientStep,
) -> Result<TrainOutcome, NnError> {
    if train_set.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut rng = rng_from_seed(config.seed);
    let mut step = 0;
    train_loop(model, val, config, |m, lr, _| run_epoch(m, train_set, config.batch_size, lr, &mut rng, &mut step, grad))
}

/// Plain minibatch SGD on the mean cross-entropy.
pub fn train(
    model: Model,
    train_set: &TimeSeriesDataset,
    val: &TimeSeriesDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, NnError> {
    train_with(model, train_set, val, config, &mut PlainGradient)
}
