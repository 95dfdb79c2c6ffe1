//! Training loop, task losses and the four evaluation protocols.

mod anomaly;
mod eval;

pub use anomaly::{
    anomaly_scores, calibrate_threshold, detect_anomalies, flag_scores, AnomalyCriterion,
};
pub use eval::{
    argmax_rows, classify, evaluate_classification, evaluate_forecast, persistence_forecast,
    predict_windows, run_imputation, window_mask, ForecastEval, ImputationEval,
};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowDataset;
use crate::model::{MultiScaleMixer, TaskKind};
use crate::nn::{adam_step, AdamConfig, AdamState};
use crate::tensor::{log_softmax, Tensor, TensorError};
use crate::{Error, Result};

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Optimizer steps of linear warm-up from `lr / warmup_steps` to `lr`.
    pub warmup_steps: usize,
    /// Multiplicative per-epoch factor applied after warm-up.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Fraction of masked time steps for imputation training.
    pub mask_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-3,
            warmup_steps: 20,
            lr_decay: 0.97,
            epochs: 50,
            batch_size: 32,
            patience: 10,
            seed: 0,
            mask_ratio: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::InvalidConfig { field, reason });
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr", format!("{} must be finite and nonnegative", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay", format!("{} outside (0, 1]", self.lr_decay));
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad("mask_ratio", format!("{} outside (0, 1)", self.mask_ratio));
        }
        Ok(())
    }

    /// Learning rate for a given optimizer step within `epoch`.
    pub fn lr_at(&self, step: usize, epoch: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.lr * self.lr_decay.powi(epoch as i32)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
    pub seconds: f64,
    pub seed: u64,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        self.val_losses[self.best_epoch]
    }
}

/// L2 losses for sequence tasks, cross-entropy for classification.
/// `mask[b·T + t]` marks hidden time steps and is required for imputation only.
pub fn task_loss(
    kind: &TaskKind,
    pred: &Tensor,
    target: &Tensor,
    mask: Option<&[bool]>,
) -> Result<Tensor> {
    match kind {
        TaskKind::Imputation => {
            let mask = mask.ok_or_else(|| Error::Invalid("imputation loss needs a mask".into()))?;
            let &[b, t, c] = pred.shape() else {
                return Err(Error::Invalid(format!(
                    "imputation loss expects [B, T, C], got {:?}",
                    pred.shape()
                )));
            };
            if mask.len() != b * t {
                return Err(Error::Invalid(format!(
                    "mask has {} entries, expected {}",
                    mask.len(),
                    b * t
                )));
            }
            let hidden = mask.iter().filter(|&&m| m).count();
            if hidden == 0 {
                return Err(Error::Invalid("empty mask".into()));
            }
            let w = Tensor::constant(
                &[b, t, 1],
                mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
            )?;
            Ok(pred
                .sub(target)?
                .square()
                .mul(&w)?
                .sum()
                .scale(1.0 / (hidden * c) as f64))
        }
        _ if mask.is_some() => Err(Error::Invalid(format!(
            "a mask is only valid for imputation, not {}",
            kind.name()
        ))),
        TaskKind::Classification { n_classes } => {
            let &[b, k] = pred.shape() else {
                return Err(Error::Invalid(format!(
                    "classification loss expects [B, K], got {:?}",
                    pred.shape()
                )));
            };
            if k != *n_classes || target.shape() != [b, k] {
                return Err(Error::Invalid(
                    "classification target must be one-hot [B, K]".into(),
                ));
            }
            Ok(log_softmax(pred, 1)?
                .mul(target)?
                .sum()
                .scale(-1.0 / b as f64))
        }
        TaskKind::Forecast { .. } | TaskKind::AnomalyDetection => {
            if pred.shape() != target.shape() {
                return Err(Error::Invalid(format!(
                    "prediction {:?} vs target {:?}",
                    pred.shape(),
                    target.shape()
                )));
            }
            Ok(pred.sub(target)?.square().mean())
        }
    }
}

pub(crate) fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut v = vec![0.0; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Invalid(format!(
                "label {l} out of range for {k} classes"
            )));
        }
        v[i * k + l] = 1.0;
    }
    Ok(Tensor::constant(&[labels.len(), k], v)?)
}

/// SplitMix64 finalizer; derives independent sub-seeds.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x9e37_79b9_7f4a_7c15u64, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

/// Forward pass plus loss on the windows `idx`. `mask_seed` fixes imputation masks.
pub(crate) fn batch_loss(
    model: &MultiScaleMixer,
    ds: &WindowDataset,
    idx: &[usize],
    mask_ratio: f64,
    mask_seed: u64,
) -> Result<Tensor> {
    let kind = model.config.task;
    let x = ds.inputs(idx)?;
    match kind {
        TaskKind::Classification { n_classes } => {
            let pred = model.predict(&x, None)?;
            task_loss(&kind, &pred, &one_hot(&ds.labels(idx)?, n_classes)?, None)
        }
        TaskKind::Imputation => {
            let mask: Vec<bool> = idx
                .iter()
                .map(|&i| window_mask(ds.seq_len, mask_ratio, mask_seed, i))
                .collect::<Result<Vec<_>>>()?
                .concat();
            let observed: Vec<bool> = mask.iter().map(|m| !m).collect();
            let pred = model.predict(&x, Some(&observed))?;
            task_loss(&kind, &pred, &x, Some(&mask))
        }
        TaskKind::Forecast { .. } | TaskKind::AnomalyDetection => {
            let pred = model.predict(&x, None)?;
            task_loss(&kind, &pred, &ds.sequence_targets(idx)?, None)
        }
    }
}

/// Mean loss over a dataset, weighted by batch size.
pub fn dataset_loss(
    model: &MultiScaleMixer,
    ds: &WindowDataset,
    batch_size: usize,
    mask_ratio: f64,
    mask_seed: u64,
) -> Result<f64> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let mut total = 0.0;
    for chunk in all.chunks(batch_size.max(1)) {
        total += batch_loss(model, ds, chunk, mask_ratio, mask_seed)?.item() * chunk.len() as f64;
    }
    Ok(total / ds.len() as f64)
}

/// Mini-batch Adam; the model ends with its best-on-validation parameters.
/// Overflowing activations surface as non-finite op inputs before any loss exists.
fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::Diverged { epoch },
        other => other,
    }
}

pub fn train(
    model: &mut MultiScaleMixer,
    train_set: &WindowDataset,
    val_set: &WindowDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Invalid(
            "training and validation sets must be nonempty".into(),
        ));
    }
    let started = Instant::now();
    let params = model.params().clone();
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let val_seed = mix_seed(&[cfg.seed, u64::MAX]);
    let mut report = TrainReport {
        train_losses: Vec::new(),
        val_losses: Vec::new(),
        best_epoch: 0,
        seconds: 0.0,
        seed: cfg.seed,
    };
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, epoch as u64, 1]));
        order.shuffle(&mut rng);
        let mask_seed = mix_seed(&[cfg.seed, epoch as u64, 2]);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            params.zero_grad();
            let loss = batch_loss(model, train_set, chunk, cfg.mask_ratio, mask_seed)
                .map_err(|e| diverged(e, epoch))?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss.backward()?;
            adam.set_lr(cfg.lr_at(step, epoch));
            adam_step(&params, &mut adam)?;
            step += 1;
            epoch_loss += value * chunk.len() as f64;
        }
        let val = dataset_loss(model, val_set, cfg.batch_size, cfg.mask_ratio, val_seed)
            .map_err(|e| diverged(e, epoch))?;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        report
            .train_losses
            .push(epoch_loss / train_set.len() as f64);
        report.val_losses.push(val);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, params.snapshot()));
            report.best_epoch = epoch;
        } else if epoch - report.best_epoch >= cfg.patience {
            break;
        }
    }
    if let Some((_, snapshot)) = best {
        params.restore(&snapshot)?;
    }
    params.zero_grad();
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}
