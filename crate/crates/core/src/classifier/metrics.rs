use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::corpus::Label;

pub const DEFAULT_ROC_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Confusion counts and the derived ratios. A ratio is `None` when its
/// denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_measure: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMetrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_measure = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        ConfusionMetrics {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f_measure,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Undefined ratios count as 0 in aggregate comparisons.
    pub fn precision_or_zero(&self) -> f64 {
        self.precision.unwrap_or(0.0)
    }

    pub fn recall_or_zero(&self) -> f64 {
        self.recall.unwrap_or(0.0)
    }

    pub fn f_measure_or_zero(&self) -> f64 {
        self.f_measure.unwrap_or(0.0)
    }

    pub fn accuracy_or_zero(&self) -> f64 {
        self.accuracy.unwrap_or(0.0)
    }
}

pub fn confusion_metrics(
    predictions: &[Label],
    labels: &[Label],
) -> Result<ConfusionMetrics, ClassifierError> {
    if predictions.len() != labels.len() {
        return Err(ClassifierError::LengthMismatch(predictions.len(), labels.len()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (p, y) in predictions.iter().zip(labels) {
        match (p, y) {
            (Label::Campaign, Label::Campaign) => tp += 1,
            (Label::Campaign, Label::Normal) => fp += 1,
            (Label::Normal, Label::Normal) => tn += 1,
            (Label::Normal, Label::Campaign) => fn_ += 1,
        }
    }
    Ok(ConfusionMetrics::from_counts(tp, fp, tn, fn_))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One ROC point per threshold, classifying with score >= threshold.
pub fn roc_curve(
    scores: &[f64],
    labels: &[Label],
    thresholds: &[f64],
) -> Result<Vec<RocPoint>, ClassifierError> {
    if scores.len() != labels.len() {
        return Err(ClassifierError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|l| l.is_campaign()).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(ClassifierError::SingleClassInput);
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (s, l) in scores.iter().zip(labels) {
                if *s >= t {
                    if l.is_campaign() {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            RocPoint {
                threshold: t,
                fpr: fp as f64 / neg as f64,
                tpr: tp as f64 / pos as f64,
            }
        })
        .collect())
}
