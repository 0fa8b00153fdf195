//! Validation-driven learning-rate plateau schedule and early stopping.

/// Minimum rise in validation Dice that counts as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

/// Multiplies the learning rate by `factor` once the best validation Dice
/// has gone `patience` epochs without improving, never going below `min_lr`.
/// The wait counter restarts after every reduction and every improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: Option<f64>,
    wait: usize,
}

impl PlateauSchedule {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauSchedule {
            factor,
            patience,
            min_lr,
            best: None,
            wait: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Feed one epoch's validation Dice; returns the learning rate for the
    /// next epoch.
    pub fn step(&mut self, dice: f64, lr: f64) -> f64 {
        if self.best.map_or(true, |b| dice > b + IMPROVEMENT_EPS) {
            self.best = Some(dice);
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

/// Replays `history` through a fresh [`PlateauSchedule`] and returns the
/// learning rate that follows its last entry, starting from `current_lr`
/// as the rate in force when the last entry was recorded.
///
/// Returns `current_lr` for an empty history.
pub fn lr_schedule_update(
    history: &[f64],
    current_lr: f64,
    factor: f64,
    patience: usize,
    min_lr: f64,
) -> f64 {
    let mut s = PlateauSchedule::new(factor, patience, min_lr);
    let Some((last, earlier)) = history.split_last() else {
        return current_lr;
    };
    for &d in earlier {
        s.step(d, current_lr);
    }
    s.step(*last, current_lr)
}

/// Number of epochs since the best validation Dice (improvements need to
/// exceed [`IMPROVEMENT_EPS`]).
pub fn epochs_since_best(history: &[f64]) -> usize {
    let mut best: Option<f64> = None;
    let mut since = 0;
    for &d in history {
        if best.map_or(true, |b| d > b + IMPROVEMENT_EPS) {
            best = Some(d);
            since = 0;
        } else {
            since += 1;
        }
    }
    since
}

/// True once the best validation Dice is `patience` epochs old.
pub fn early_stop_check(history: &[f64], patience: usize) -> bool {
    !history.is_empty() && epochs_since_best(history) >= patience
}
