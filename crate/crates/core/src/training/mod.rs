//! Focal-loss training with Adam, a validation-driven plateau schedule,
//! early stopping and geometric augmentation.

mod augment;
mod optim;
mod schedule;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, crop_resize, hflip, rotate, MAX_ROTATION_DEG, MIN_CROP_AREA};
pub use optim::Adam;
pub use schedule::{
    early_stop_check, epochs_since_best, lr_schedule_update, PlateauSchedule, IMPROVEMENT_EPS,
};

use crate::data::{batch_tensors, Sample};
use crate::error::{Error, Result};
use crate::metrics::{Averaging, ConfusionMatrix};
use crate::model::{argmax_channels, Model};
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub lr_min: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub focal_gamma: f64,
    /// Per-class weights; `None` means 1.0 for every class.
    pub focal_alpha: Option<Vec<f64>>,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr_init: 1e-4,
            plateau_factor: 0.8,
            plateau_patience: 8,
            lr_min: 1e-5,
            early_stop_patience: 10,
            max_epochs: 100,
            focal_gamma: 2.0,
            focal_alpha: None,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_init && self.lr_init.is_finite()) {
            return bad(format!(
                "need 0 <= lr_min <= lr_init, got lr_min {} and lr_init {}",
                self.lr_min, self.lr_init
            ));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!(
                "plateau_factor {} is outside (0, 1)",
                self.plateau_factor
            ));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return bad(format!(
                "focal_gamma {} must be finite and non-negative",
                self.focal_gamma
            ));
        }
        if let Some(a) = &self.focal_alpha {
            if a.len() != num_classes {
                return bad(format!(
                    "focal_alpha has {} weights for {num_classes} classes",
                    a.len()
                ));
            }
            if a.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad("focal_alpha weights must be finite and non-negative".into());
            }
        }
        Ok(())
    }

    pub fn alpha(&self, num_classes: usize) -> Vec<f64> {
        self.focal_alpha
            .clone()
            .unwrap_or_else(|| vec![1.0; num_classes])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub val_dice: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub stopped: bool,
}

pub const LOG_HEADER: &str = "epoch,loss,val_dice,lr,stopped";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.loss, self.val_dice, self.lr, self.stopped
        )
    }
}

/// The training log as CSV text, header included.
pub fn log_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Mean categorical focal loss of `(N,K,H,W)` probabilities against class ids.
pub fn focal_loss(probs: &Tensor<f32>, target: &[u8], gamma: f64, alpha: &[f64]) -> Result<f64> {
    let t: Vec<usize> = target.iter().map(|&c| c as usize).collect();
    crate::tensor::focal_loss_value(probs, &t, gamma, alpha)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation Dice.
    pub best: Model,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    /// Parameters after the final epoch.
    pub last: Model,
    pub records: Vec<EpochRecord>,
}

/// Pixel-pooled confusion matrix of `model` over `samples`.
pub fn confusion(model: &Model, samples: &[Sample], batch_size: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.config().num_classes);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = batch_tensors(&refs)?;
        let pred = argmax_channels(&model.forward(&x)?);
        let truth: Vec<u8> = chunk.iter().flat_map(|s| s.mask.iter().copied()).collect();
        cm.accumulate(&pred, &truth)?;
    }
    Ok(cm)
}

/// Macro Dice over all classes.
pub fn validation_dice(model: &Model, samples: &[Sample], batch_size: usize) -> Result<f64> {
    Ok(confusion(model, samples, batch_size)?.macro_dice(Averaging::AllClasses))
}

/// One optimiser step on a batch; returns the batch loss.
pub fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    batch: &[&Sample],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let k = model.config().num_classes;
    let (x, target) = batch_tensors(batch)?;
    let mut g = Graph::new();
    let pv = model.register(&mut g, true);
    let xv = g.leaf(x);
    let probs = model.forward_graph(&mut g, &pv, xv)?;
    let loss = g.focal_loss(probs, &target, cfg.focal_gamma, &cfg.alpha(k))?;
    let value = g.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Ok(value);
    }
    g.backward(loss)?;
    let grads: BTreeMap<String, Vec<f32>> = pv
        .iter()
        .map(|(name, &v)| {
            let grad = g
                .grad(v)
                .map(<[f32]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.shape(v).numel()]);
            (name.clone(), grad)
        })
        .collect();
    opt.step(model.params_mut(), &grads, lr)?;
    Ok(value)
}

pub fn train(
    model: Model,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, train_set, val_set, cfg, |_, _| Ok(()))
}

/// Train, calling `on_epoch` after every epoch with its record and the
/// current parameters.
pub fn train_with(
    mut model: Model,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Model) -> Result<()>,
) -> Result<TrainOutcome> {
    let k = model.config().num_classes;
    cfg.validate(k)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config(format!(
            "training needs non-empty train and validation sets, got {} and {}",
            train_set.len(),
            val_set.len()
        )));
    }
    for s in train_set.iter().chain(val_set) {
        s.check_classes(k)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::default();
    let mut plateau = PlateauSchedule::new(cfg.plateau_factor, cfg.plateau_patience, cfg.lr_min);
    let mut lr = cfg.lr_init;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::new();
    let mut history = Vec::new();
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = idx
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment(&train_set[i], &mut rng)
                    } else {
                        train_set[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&Sample> = batch.iter().collect();
            let loss = train_step(&mut model, &mut opt, &refs, cfg, lr)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became {loss} in epoch {epoch}"
                )));
            }
            total += loss * idx.len() as f64;
        }
        let loss = total / train_set.len() as f64;
        let val_dice = validation_dice(&model, val_set, cfg.batch_size)?;
        history.push(val_dice);
        if val_dice > best.2 + IMPROVEMENT_EPS || epoch == 1 {
            best = (model.clone(), epoch, val_dice);
        }
        let stopped = early_stop_check(&history, cfg.early_stop_patience);
        let rec = EpochRecord {
            epoch,
            loss,
            val_dice,
            lr,
            stopped,
        };
        log::info!(
            "epoch {epoch}: loss {loss:.5} val_dice {val_dice:.4} lr {lr:e}{}",
            if stopped { " (early stop)" } else { "" }
        );
        on_epoch(&rec, &model)?;
        records.push(rec);
        lr = plateau.step(val_dice, lr);
        if stopped {
            break;
        }
    }
    Ok(TrainOutcome {
        best: best.0,
        best_epoch: best.1,
        best_val_dice: best.2,
        last: model,
        records,
    })
}
