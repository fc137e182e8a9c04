//! Pixel-level confusion counts and the three evaluation measures:
//! Jaccard index (intersection over union), Dice similarity coefficient,
//! and overall pixel accuracy.
//!
//! Counts are exact integers; ratios are computed in f64.

use thiserror::Error;

use crate::imagebuf::MaskU8;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("threshold {0} outside [0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("shape mismatch: prediction {pred_w}x{pred_h} vs truth {truth_w}x{truth_h}")]
    ShapeMismatch { pred_w: usize, pred_h: usize, truth_w: usize, truth_h: usize },
    #[error("mask contains non-binary value {0}")]
    NonBinaryInput(u8),
    #[error("empty input: total pixel count is zero")]
    EmptyInput,
}

/// Pixel confusion counts between a predicted and a ground-truth mask.
/// Foreground (1) is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Dice, Jaccard and accuracy for one mask pair (or one pooled set).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsResult {
    pub dice: f64,
    pub jaccard: f64,
    pub accuracy: f64,
}

/// Threshold a probability map into a binary mask: pixel = 1 iff
/// `prob >= threshold`.
pub fn binarize(probs: &[f32], width: usize, height: usize, threshold: f64) -> Result<MaskU8, MetricsError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::ThresholdOutOfRange(threshold));
    }
    assert_eq!(probs.len(), width * height, "probability map size");
    let data: Vec<u8> = probs.iter().map(|&p| (p as f64 >= threshold) as u8).collect();
    Ok(MaskU8::from_raw(width, height, data))
}

/// Count TP / TN / FP / FN between prediction and truth.
pub fn confusion(pred: &MaskU8, truth: &MaskU8) -> Result<ConfusionCounts, MetricsError> {
    if (pred.width, pred.height) != (truth.width, truth.height) {
        return Err(MetricsError::ShapeMismatch {
            pred_w: pred.width,
            pred_h: pred.height,
            truth_w: truth.width,
            truth_h: truth.height,
        });
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        if p > 1 {
            return Err(MetricsError::NonBinaryInput(p));
        }
        if t > 1 {
            return Err(MetricsError::NonBinaryInput(t));
        }
        match (p, t) {
            (1, 1) => counts.tp += 1,
            (0, 0) => counts.tn += 1,
            (1, 0) => counts.fp += 1,
            (0, 1) => counts.fn_ += 1,
            _ => unreachable!(),
        }
    }
    Ok(counts)
}

/// Jaccard index: `tp / (tp + fp + fn)`. When both masks are empty the
/// union is empty and the overlap is perfect by convention (1.0).
pub fn jaccard(c: &ConfusionCounts) -> f64 {
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        c.tp as f64 / denom as f64
    }
}

/// Dice similarity: `2*tp / (2*tp + fp + fn)`, both-empty convention 1.0.
pub fn dice(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

/// Overall pixel accuracy: `(tp + tn) / total`.
pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    let total = c.total();
    if total == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok((c.tp + c.tn) as f64 / total as f64)
}

/// All three measures from one set of counts.
pub fn all_metrics(c: &ConfusionCounts) -> Result<MetricsResult, MetricsError> {
    Ok(MetricsResult { dice: dice(c), jaccard: jaccard(c), accuracy: accuracy(c)? })
}
