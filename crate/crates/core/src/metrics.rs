//! Classification metrics.
//!
//! Per-class one-vs-rest precision, recall, F1 and FPR are support-weighted
//! into scalar summaries. Accuracy is the trace of the confusion tensor over
//! the total, which coincides with support-weighted per-class recall (the
//! identity is asserted in tests). Per-class divisions by zero resolve to 0
//! and raise a flag.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{ModelSpec, ParamVector};
use crate::nn;

/// K x K matrix of (true class, predicted class) counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTensor {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionTensor {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Dimension("confusion tensor is not KxK".into()));
        }
        Ok(Self { classes, counts })
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) {
        self.counts[true_class * self.classes + predicted] += 1;
    }

    pub fn get(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.classes + predicted]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    /// Set when any per-class ratio hit a zero denominator and was
    /// resolved to 0.
    pub zero_division: bool,
}

/// Support-weighted metrics over a confusion tensor. Classes with zero
/// support are excluded from the averages.
pub fn weighted_metrics(conf: &ConfusionTensor) -> Result<WeightedMetrics> {
    let total = conf.total();
    if total == 0 {
        return Err(Error::Input("metrics over an empty confusion tensor".into()));
    }
    let k = conf.classes();
    let n = total as f64;
    let mut zero_division = false;
    let mut ratio = |num: f64, den: f64| -> f64 {
        if den == 0.0 {
            zero_division = true;
            0.0
        } else {
            num / den
        }
    };

    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut f1 = 0.0;
    let mut fpr = 0.0;
    let mut weight_total = 0.0;
    for class in 0..k {
        let support = conf.support(class) as f64;
        if support == 0.0 {
            continue;
        }
        let tp = conf.get(class, class) as f64;
        let fn_ = support - tp;
        let fp: f64 =
            (0..k).filter(|&t| t != class).map(|t| conf.get(t, class) as f64).sum();
        let tn = n - tp - fn_ - fp;
        let w = support / n;
        weight_total += w;
        precision += w * ratio(tp, tp + fp);
        recall += w * ratio(tp, tp + fn_);
        f1 += w * ratio(2.0 * tp, 2.0 * tp + fn_ + fp);
        fpr += w * ratio(fp, fp + tn);
    }
    // Renormalize in case zero-support classes were skipped.
    precision /= weight_total;
    recall /= weight_total;
    f1 /= weight_total;
    fpr /= weight_total;

    Ok(WeightedMetrics {
        accuracy: conf.trace() as f64 / n,
        precision,
        recall,
        f1,
        fpr,
        zero_division,
    })
}

/// Runs the model over a labeled set and tallies argmax predictions.
pub fn evaluate(
    params: &ParamVector,
    spec: &ModelSpec,
    features: &Matrix,
    labels: &[usize],
) -> Result<ConfusionTensor> {
    if features.rows() != labels.len() {
        return Err(Error::Dimension("label count does not match rows".into()));
    }
    let probs = nn::forward(params, spec, features)?;
    let mut conf = ConfusionTensor::new(spec.class_count());
    for (r, &label) in labels.iter().enumerate() {
        let row = probs.row(r);
        let pred = row
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0;
        conf.record(label, pred);
    }
    Ok(conf)
}
