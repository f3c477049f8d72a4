//! Binary segmentation metrics from pixel counts.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The five evaluation metrics, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

impl MetricsReport {
    /// Unweighted mean of per-image reports.
    pub fn mean(reports: &[MetricsReport]) -> MetricsReport {
        let n = reports.len().max(1) as f64;
        let mut acc = MetricsReport { accuracy: 0.0, precision: 0.0, recall: 0.0, f1: 0.0, iou: 0.0 };
        for r in reports {
            acc.accuracy += r.accuracy;
            acc.precision += r.precision;
            acc.recall += r.recall;
            acc.f1 += r.f1;
            acc.iou += r.iou;
        }
        MetricsReport {
            accuracy: acc.accuracy / n,
            precision: acc.precision / n,
            recall: acc.recall / n,
            f1: acc.f1 / n,
            iou: acc.iou / n,
        }
    }
}

/// Pixel counts of a prediction against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

pub fn pixel_counts(pred: &Tensor, gt: &Tensor) -> Result<PixelCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "metrics: prediction {:?} and ground truth {:?} differ",
            pred.shape(),
            gt.shape()
        )));
    }
    if !pred.is_binary() || !gt.is_binary() {
        return Err(Error::Argument("metrics: masks must be binary (0/1)".into()));
    }
    let mut c = PixelCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == 1.0, g == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Accuracy, precision, recall, F1 and IoU from pixel counts.
///
/// Degenerate denominators are fixed conventions: when a ratio's denominator
/// is zero and both masks are empty the metric is 1; when the denominator is
/// zero otherwise the metric is 0.
pub fn metrics(pred: &Tensor, gt: &Tensor) -> Result<MetricsReport> {
    let c = pixel_counts(pred, gt)?;
    Ok(metrics_from_counts(c))
}

pub fn metrics_from_counts(c: PixelCounts) -> MetricsReport {
    let both_empty = c.tp == 0 && c.fp == 0 && c.fn_ == 0;
    let ratio = |num: u64, den: u64| -> f64 {
        if den == 0 {
            if both_empty {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    let total = c.tp + c.fp + c.fn_ + c.tn;
    MetricsReport {
        accuracy: ratio(c.tp + c.tn, total),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_),
    }
}
