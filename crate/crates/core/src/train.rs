//! Mini-batch training loop, evaluation and the training report.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{PreparedData, SequenceDataset};
use crate::metrics::{self, EvalReport};
use crate::model::{ModelParams, SohModel};
use crate::optim::{
    clip_grad_norm, AdamState, Decision, StopReason, TrainController, DEFAULT_LR, DEFAULT_LR_FACTOR,
    DEFAULT_LR_PATIENCE, DEFAULT_MIN_LR, DEFAULT_PATIENCE,
};
use crate::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_MAX_EPOCHS: usize = 100;
pub const DEFAULT_CLIP_NORM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_grad: Option<f64>,
    /// Shuffle the training windows before every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            lr: DEFAULT_LR,
            patience: DEFAULT_PATIENCE,
            lr_patience: DEFAULT_LR_PATIENCE,
            lr_factor: DEFAULT_LR_FACTOR,
            min_lr: DEFAULT_MIN_LR,
            clip_grad: None,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Contract("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Contract("max_epochs must be at least 1".into()));
        }
        if let Some(c) = self.clip_grad {
            if !(c > 0.0) {
                return Err(Error::Contract(format!("clip_grad must be positive, got {c}")));
            }
        }
        TrainController::new(self.lr, self.patience, self.lr_patience, self.lr_factor, self.min_lr)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the per-batch losses.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: String,
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// Epoch whose parameters were kept; 0 if no epoch finished.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub wall_clock_s: f64,
    /// Test-partition evaluation of the kept parameters.
    pub test: Option<EvalReport>,
}

impl TrainReport {
    pub fn diverged(&self) -> bool {
        self.stop_reason == StopReason::Divergence
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    /// `key=value` header, then an `[epochs]` section in CSV.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "model={}", self.model).unwrap();
        writeln!(s, "stop_reason={}", self.stop_reason).unwrap();
        writeln!(s, "diverged={}", self.diverged()).unwrap();
        writeln!(s, "epochs_run={}", self.epochs.len()).unwrap();
        writeln!(s, "best_epoch={}", self.best_epoch).unwrap();
        writeln!(s, "best_val_loss={}", self.best_val_loss).unwrap();
        writeln!(s, "batch_size={}", self.batch_size).unwrap();
        writeln!(s, "batches_per_epoch={}", self.batches_per_epoch).unwrap();
        writeln!(s, "wall_clock_s={}", self.wall_clock_s).unwrap();
        if let Some(t) = &self.test {
            for line in t.to_kv().lines() {
                writeln!(s, "test.{line}").unwrap();
            }
        }
        writeln!(s, "[epochs]").unwrap();
        writeln!(s, "epoch,train_loss,val_loss,lr").unwrap();
        for e in &self.epochs {
            writeln!(s, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr).unwrap();
        }
        s
    }
}

/// Train `model` in place on `data.train`, selecting by `data.val`, and
/// leave it holding the best-validation parameters.
pub fn train<R: Rng + ?Sized>(
    model: &mut SohModel,
    data: &PreparedData,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    train_with_val_hook(model, data, cfg, rng, |_, v| v)
}

/// As [`train`], but the validation loss handed to the controller is
/// `hook(epoch, computed_val_loss)`. The hooked value is also what the
/// report records.
pub fn train_with_val_hook<R, F>(
    model: &mut SohModel,
    data: &PreparedData,
    cfg: &TrainConfig,
    rng: &mut R,
    mut hook: F,
) -> Result<TrainReport>
where
    R: Rng + ?Sized,
    F: FnMut(usize, f64) -> f64,
{
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InsufficientData("training partition has no windows".into()));
    }
    if data.val.is_empty() {
        return Err(Error::InsufficientData("validation partition has no windows".into()));
    }
    if model.feature_scaler.is_none() {
        *model = model
            .clone()
            .with_scalers(data.feature_scaler.clone(), data.target_scaler.clone(), data.nominal_capacity);
    }

    let start = Instant::now();
    let mut controller = TrainController::new(cfg.lr, cfg.patience, cfg.lr_patience, cfg.lr_factor, cfg.min_lr)?;
    let mut adam = AdamState::new(controller.lr());
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let batches_per_epoch = order.len().div_ceil(cfg.batch_size);
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut stop_reason = StopReason::MaxEpochs;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let lr = controller.lr();
        adam.lr = lr;
        if cfg.shuffle {
            order.shuffle(rng);
        }
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| data.train.samples[i].clone()).collect();
            let out = model.loss(&batch);
            let mut out = match out {
                Ok(o) if o.loss.is_finite() => o,
                Ok(_) | Err(Error::Divergence(_)) => {
                    stop_reason = StopReason::Divergence;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            loss_sum += out.loss;
            if let Some(c) = cfg.clip_grad {
                clip_grad_norm(&mut out.grads, c);
            }
            match adam.step(&mut model.params, &out.grads) {
                Ok(()) => {}
                Err(Error::Divergence(_)) => {
                    stop_reason = StopReason::Divergence;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let computed = match model.loss_value(&data.val.samples) {
            Ok(v) => v,
            Err(Error::Divergence(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        let val_loss = hook(epoch, computed);
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches_per_epoch as f64,
            val_loss,
            lr,
        });
        let before = controller.best_val();
        let decision = controller.update(val_loss)?;
        if controller.best_val() < before {
            best = Some((epoch, val_loss, model.params.clone()));
        }
        match decision {
            Decision::Continue | Decision::ReduceLr(_) => {}
            Decision::Stop(reason) => {
                stop_reason = reason;
                break;
            }
        }
    }

    let (best_epoch, best_val_loss) = match best {
        Some((e, v, params)) => {
            model.params = params;
            (e, v)
        }
        None => (0, f64::NAN),
    };
    let wall_clock_s = start.elapsed().as_secs_f64();
    let test = if best_epoch > 0 && !data.test.is_empty() {
        Some(evaluate(model, &data.test, None)?)
    } else {
        None
    };
    Ok(TrainReport {
        model: model.spec.kind.to_string(),
        epochs,
        stop_reason,
        best_epoch,
        best_val_loss,
        batch_size: cfg.batch_size,
        batches_per_epoch,
        wall_clock_s,
        test,
    })
}

/// Per-window denormalized predictions alongside the actual targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRow {
    pub cycle_index: u32,
    pub soh_actual: f64,
    pub soh_pred: f64,
    pub cap_actual: f64,
    pub cap_pred: f64,
}

pub fn predict_dataset(model: &SohModel, ds: &SequenceDataset) -> Result<Vec<PredictionRow>> {
    ds.samples
        .iter()
        .map(|s| {
            let p = model.predict(&s.window)?;
            Ok(PredictionRow {
                cycle_index: s.target_cycle,
                soh_actual: s.raw_target[0],
                soh_pred: p.soh,
                cap_actual: s.raw_target[1],
                cap_pred: p.capacity,
            })
        })
        .collect()
}

/// RMSE and MAPE of the SOH output over `ds`, timing the whole pass.
pub fn evaluate(model: &SohModel, ds: &SequenceDataset, baseline_rmse: Option<f64>) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::InsufficientData(format!("{} partition has no windows", ds.partition)));
    }
    let start = Instant::now();
    let rows = predict_dataset(model, ds)?;
    let pred: Vec<f64> = rows.iter().map(|r| r.soh_pred).collect();
    let actual: Vec<f64> = rows.iter().map(|r| r.soh_actual).collect();
    let rmse = metrics::rmse(&pred, &actual)?;
    let mape = metrics::mape(&pred, &actual)?;
    let execution_time_s = start.elapsed().as_secs_f64();
    Ok(EvalReport {
        rmse,
        mape,
        error_reduction_vs_baseline: baseline_rmse.map(|b| metrics::error_reduction(rmse, b)).transpose()?,
        execution_time_s,
        n_samples: rows.len(),
    })
}
