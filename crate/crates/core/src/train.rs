//! Epoch loop over precomputed feature vectors.
//!
//! Each epoch reshuffles the fit set, steps Adam once per mini-batch, then
//! scores the validation set in inference mode. Two monitors run on the
//! validation metrics:
//!
//! * early stopping on validation accuracy. The best weights are snapshotted
//!   on every strict improvement and restored when training ends. The patience
//!   counter only resets when the gain exceeds `min_delta`;
//! * reduce-on-plateau on validation loss. The learning rate is multiplied by
//!   `plateau_factor` after `plateau_patience` epochs without a `min_delta`
//!   improvement, floored at `min_lr`.

use std::ops::Range;
use std::time::Instant;

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::layers::{argmax_rows, softmax_cross_entropy};
use crate::nn::{Adam, AdamConfig, Mlp, NnError};
use crate::rng;
use crate::split::{SplitPlan, SplitSummary};

const SHUFFLE_STREAM: u64 = 0xba7c;
const DROPOUT_STREAM: u64 = 0xd509;
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    ConfigInvalid(String),
    #[error("data mismatch: {0}")]
    DataMismatch(String),
    #[error("cannot evaluate an empty index set")]
    EmptyIndexSet,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub max_epochs: usize,
    pub es_patience: usize,
    pub es_monitor: String,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub plateau_monitor: String,
    pub min_lr: f64,
    pub min_delta: f64,
    pub seed: u64,
    /// Zero out wall-clock fields so repeated runs serialize identically.
    pub deterministic: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr0: 1e-3,
            max_epochs: 100,
            es_patience: 10,
            es_monitor: "val_accuracy".into(),
            plateau_patience: 3,
            plateau_factor: 0.5,
            plateau_monitor: "val_loss".into(),
            min_lr: 1e-5,
            min_delta: 1e-4,
            seed: 42,
            deterministic: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::ConfigInvalid(msg));
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be at least 2 for batch normalization, got {}",
                self.batch_size
            ));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!(
                "plateau_factor must lie in (0, 1), got {}",
                self.plateau_factor
            ));
        }
        if self.min_lr <= 0.0 || self.min_lr.is_nan() {
            return bad(format!("min_lr must be positive, got {}", self.min_lr));
        }
        if self.min_lr > self.lr0 {
            return bad(format!(
                "min_lr {} exceeds lr0 {}",
                self.min_lr, self.lr0
            ));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.es_monitor != "val_accuracy" || self.plateau_monitor != "val_loss" {
            return bad("monitors are fixed to val_accuracy (stopping) and val_loss (plateau)".into());
        }
        if self.min_delta < 0.0 {
            return bad(format!("min_delta must be non-negative, got {}", self.min_delta));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub config: TrainConfig,
    pub split: SplitSummary,
}

impl TrainReport {
    /// One JSON object per epoch, newline-terminated.
    pub fn records_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }

    /// Everything but the per-epoch records.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            epochs_run: usize,
            best_epoch: usize,
            best_val_accuracy: Option<f64>,
            stopped_early: bool,
            test_loss: Option<f64>,
            test_accuracy: Option<f64>,
            config: &'a TrainConfig,
            split: &'a SplitSummary,
        }
        let best = self
            .records
            .iter()
            .find(|r| r.epoch == self.best_epoch)
            .map(|r| r.val_acc);
        serde_json::to_string_pretty(&Summary {
            epochs_run: self.records.len(),
            best_epoch: self.best_epoch,
            best_val_accuracy: best,
            stopped_early: self.stopped_early,
            test_loss: self.test_loss,
            test_accuracy: self.test_accuracy,
            config: &self.config,
            split: &self.split,
        })
        .expect("summary serializes")
            + "\n"
    }
}

/// Early-stopping monitor on a metric that should increase.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: Option<usize>,
    reference: f64,
    wait: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    /// The metric beat every earlier value; snapshot the weights.
    pub new_best: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::NEG_INFINITY,
            best_epoch: None,
            reference: f64::NEG_INFINITY,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        let new_best = metric > self.best;
        if new_best {
            self.best = metric;
            self.best_epoch = Some(epoch);
        }
        if metric > self.reference + self.min_delta {
            self.reference = metric;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        StopDecision {
            new_best,
            stop: self.wait >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

/// Multiplies the learning rate by `factor` when a loss stops improving.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    patience: usize,
    factor: f64,
    min_lr: f64,
    min_delta: f64,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64, min_lr: f64, min_delta: f64) -> Self {
        Self {
            patience,
            factor,
            min_lr,
            min_delta,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Returns the learning rate to use from the next epoch on.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            (lr * self.factor).max(self.min_lr)
        } else {
            lr
        }
    }
}

/// Splits `0..n` into consecutive batches of `batch_size`; a trailing batch
/// with fewer than 2 samples is merged into the one before it.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<Range<usize>> {
    let mut ranges: Vec<Range<usize>> = (0..n)
        .step_by(batch_size.max(1))
        .map(|start| start..(start + batch_size).min(n))
        .collect();
    if ranges.len() > 1 && ranges.last().is_some_and(|r| r.len() < 2) {
        let tail = ranges.pop().expect("non-empty");
        ranges.last_mut().expect("non-empty").end = tail.end;
    }
    ranges
}

fn check_data(features: &ArrayView2<f32>, labels: &[u8], indices: &[usize]) -> Result<(), TrainError> {
    if features.nrows() != labels.len() {
        return Err(TrainError::DataMismatch(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= labels.len()) {
        return Err(TrainError::DataMismatch(format!(
            "index {i} out of range for {} samples",
            labels.len()
        )));
    }
    Ok(())
}

/// Mean cross-entropy and top-1 accuracy over `indices` in inference mode.
/// Argmax ties go to the lowest class index.
pub fn evaluate(
    model: &Mlp<f32>,
    features: ArrayView2<f32>,
    labels: &[u8],
    indices: &[usize],
) -> Result<(f64, f64), TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptyIndexSet);
    }
    check_data(&features, labels, indices)?;
    let partials = indices
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<(f64, usize), TrainError> {
            let x = features.select(Axis(0), chunk);
            let logits = model.infer(x.view())?;
            let y: Vec<usize> = chunk.iter().map(|&i| usize::from(labels[i])).collect();
            let (loss, _) = softmax_cross_entropy(logits.view(), &y)?;
            let correct = argmax_rows(logits.view())
                .iter()
                .zip(&y)
                .filter(|(p, t)| p == t)
                .count();
            Ok((loss * chunk.len() as f64, correct))
        })
        .collect::<Result<Vec<_>, _>>()?;
    // Summed in chunk order so the result does not depend on scheduling.
    let (loss_sum, correct) = partials
        .iter()
        .fold((0.0, 0usize), |(l, c), &(pl, pc)| (l + pl, c + pc));
    let n = indices.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Trains `model` on `split.fit_indices`, monitoring `split.val_indices`, and
/// returns the best-validation-accuracy weights with the run's report. Test
/// metrics are filled in when the split has a test set.
pub fn train(
    model: Mlp<f32>,
    features: ArrayView2<f32>,
    labels: &[u8],
    split: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<(Mlp<f32>, TrainReport), TrainError> {
    train_with_progress(model, features, labels, split, cfg, |_| {})
}

/// As [`train`], invoking `progress` after every epoch.
pub fn train_with_progress(
    mut model: Mlp<f32>,
    features: ArrayView2<f32>,
    labels: &[u8],
    split: &SplitPlan,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(Mlp<f32>, TrainReport), TrainError> {
    cfg.validate()?;
    check_data(&features, labels, &split.fit_indices)?;
    check_data(&features, labels, &split.val_indices)?;
    check_data(&features, labels, &split.test_indices)?;
    if split.fit_indices.len() < 2 {
        return Err(TrainError::DataMismatch(format!(
            "fit set has {} samples; at least 2 are needed",
            split.fit_indices.len()
        )));
    }
    if split.val_indices.is_empty() {
        return Err(TrainError::DataMismatch("validation set is empty".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| usize::from(l) >= model.num_classes()) {
        return Err(TrainError::DataMismatch(format!(
            "label {l} does not fit a {}-class model",
            model.num_classes()
        )));
    }

    let mut shuffle_rng = rng::substream(cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = rng::substream(cfg.seed, DROPOUT_STREAM);
    let mut adam = Adam::<f32>::new(cfg.lr0, cfg.adam.clone());
    let mut stopper = EarlyStopping::new(cfg.es_patience, cfg.min_delta);
    let mut plateau =
        PlateauScheduler::new(cfg.plateau_patience, cfg.plateau_factor, cfg.min_lr, cfg.min_delta);
    let mut best_model = model.clone();
    let mut records = Vec::new();
    let mut stopped_early = false;
    let mut order = split.fit_indices.clone();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        rng::shuffle(&mut order, &mut shuffle_rng);
        let lr = adam.alpha;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for range in batch_ranges(order.len(), cfg.batch_size) {
            let batch = &order[range];
            let x = features.select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| usize::from(labels[i])).collect();
            let (logits, cache) = model.forward_train(x.view(), &mut dropout_rng)?;
            let (loss, dlogits) = softmax_cross_entropy(logits.view(), &y)?;
            loss_sum += loss * batch.len() as f64;
            correct += argmax_rows(logits.view())
                .iter()
                .zip(&y)
                .filter(|(p, t)| p == t)
                .count();
            let grads = model.backward(&cache, dlogits.view())?;
            adam.step(&mut model.params_mut(), &grads.slices())?;
        }

        let (val_loss, val_acc) = evaluate(&model, features, labels, &split.val_indices)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_acc: correct as f64 / order.len() as f64,
            val_loss,
            val_acc,
            lr,
            wall_time: if cfg.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
        };
        progress(&record);
        records.push(record);

        let decision = stopper.observe(epoch, val_acc);
        if decision.new_best {
            best_model = model.clone();
        }
        adam.alpha = plateau.observe(val_loss, adam.alpha);
        if decision.stop {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let best_epoch = stopper.best_epoch().unwrap_or(1);
    let (test_loss, test_accuracy) = if split.test_indices.is_empty() {
        (None, None)
    } else {
        let (l, a) = evaluate(&best_model, features, labels, &split.test_indices)?;
        (Some(l), Some(a))
    };
    Ok((
        best_model,
        TrainReport {
            records,
            best_epoch,
            stopped_early,
            test_loss,
            test_accuracy,
            config: cfg.clone(),
            split: split.summary(),
        },
    ))
}
