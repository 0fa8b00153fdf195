//! Confusion-matrix segmentation metrics.
//!
//! Pixels are pooled into one global matrix; per-class values are macro
//! averaged. A ratio whose denominator is zero resolves to 1.0 when the
//! class is absent from both the truth and the prediction, otherwise 0.0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K x K` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            k: num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_masks(num_classes: usize, pred: &[u8], truth: &[u8]) -> Result<Self> {
        let mut cm = Self::new(num_classes);
        cm.accumulate(pred, truth)?;
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::dim(format!(
                "prediction has {} pixels, truth has {}",
                pred.len(),
                truth.len()
            )));
        }
        let k = self.k;
        if let Some(bad) = pred.iter().chain(truth).find(|&&c| c as usize >= k) {
            return Err(Error::Data(format!(
                "class {bad} out of range for {k} classes"
            )));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    /// Entrywise sum; commutative and associative.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::dim(format!(
                "merging {}-class and {}-class matrices",
                self.k, other.k
            )));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.k)
            .filter(|&t| t != c)
            .map(|t| self.get(t, c))
            .sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.k)
            .filter(|&p| p != c)
            .map(|p| self.get(c, p))
            .sum()
    }

    pub fn tn(&self, c: usize) -> u64 {
        self.total() - self.tp(c) - self.fp(c) - self.fn_(c)
    }

    /// Class absent from both truth and prediction.
    fn absent(&self, c: usize) -> bool {
        self.tp(c) + self.fp(c) + self.fn_(c) == 0
    }

    fn ratio(&self, c: usize, num: u64, den: u64) -> f64 {
        if den == 0 {
            if self.absent(c) {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    }

    pub fn dice_class(&self, c: usize) -> f64 {
        let (tp, fp, fn_) = (self.tp(c), self.fp(c), self.fn_(c));
        self.ratio(c, 2 * tp, 2 * tp + fp + fn_)
    }

    pub fn iou_class(&self, c: usize) -> f64 {
        let (tp, fp, fn_) = (self.tp(c), self.fp(c), self.fn_(c));
        self.ratio(c, tp, tp + fp + fn_)
    }

    pub fn precision_class(&self, c: usize) -> f64 {
        self.ratio(c, self.tp(c), self.tp(c) + self.fp(c))
    }

    pub fn sensitivity_class(&self, c: usize) -> f64 {
        self.ratio(c, self.tp(c), self.tp(c) + self.fn_(c))
    }

    pub fn specificity_class(&self, c: usize) -> f64 {
        self.ratio(c, self.tn(c), self.tn(c) + self.fp(c))
    }

    /// Pixel accuracy: trace over total.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 1.0;
        }
        (0..self.k).map(|c| self.tp(c)).sum::<u64>() as f64 / total as f64
    }

    pub fn report(&self, averaging: Averaging) -> MetricReport {
        let classes: Vec<usize> = match averaging {
            Averaging::AllClasses => (0..self.k).collect(),
            Averaging::ExcludeBackground => (1..self.k).collect(),
        };
        let per = |f: fn(&Self, usize) -> f64| {
            PerClass::new((0..self.k).map(|c| f(self, c)).collect(), &classes)
        };
        MetricReport {
            dice: per(Self::dice_class),
            iou: per(Self::iou_class),
            precision: per(Self::precision_class),
            sensitivity: per(Self::sensitivity_class),
            specificity: per(Self::specificity_class),
            accuracy: self.accuracy(),
        }
    }

    pub fn macro_dice(&self, averaging: Averaging) -> f64 {
        self.report(averaging).dice.macro_avg
    }
}

/// Which classes enter macro averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Averaging {
    #[default]
    AllClasses,
    ExcludeBackground,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub per_class: Vec<f64>,
    pub macro_avg: f64,
}

impl PerClass {
    fn new(per_class: Vec<f64>, classes: &[usize]) -> Self {
        let macro_avg = if classes.is_empty() {
            1.0
        } else {
            classes.iter().map(|&c| per_class[c]).sum::<f64>() / classes.len() as f64
        };
        PerClass {
            per_class,
            macro_avg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: PerClass,
    pub iou: PerClass,
    pub precision: PerClass,
    pub sensitivity: PerClass,
    pub specificity: PerClass,
    pub accuracy: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "name,miou,acc,pre,sen,spe,dice";

    /// One row in `name,miou,acc,pre,sen,spe,dice` order.
    pub fn csv_row(&self, name: &str) -> String {
        format!(
            "{name},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.iou.macro_avg,
            self.accuracy,
            self.precision.macro_avg,
            self.sensitivity.macro_avg,
            self.specificity.macro_avg,
            self.dice.macro_avg
        )
    }
}
