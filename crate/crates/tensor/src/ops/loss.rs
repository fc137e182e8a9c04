//! Segmentation training losses on probability maps: mean binary
//! cross-entropy and soft Dice. Both are differentiable in the prediction;
//! sums accumulate in f64.

use crate::{Scalar, Tensor};

/// Probability clamp guarding log(0) and division by zero.
pub const PROB_EPS: f64 = 1e-7;

/// Soft-Dice smoothing constant (added to numerator and denominator).
pub const DICE_SMOOTH: f64 = 1.0;

fn clamp01(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Mean binary cross-entropy over all elements.
pub fn bce_fwd<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> f64 {
    assert_eq!(pred.shape(), target.shape(), "bce: shape mismatch");
    let n = pred.numel() as f64;
    let mut acc = 0.0f64;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let p = clamp01(p.to_f64_());
        let t = t.to_f64_();
        acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    acc / n
}

/// d(mean BCE)/d(pred), scaled by the upstream scalar gradient.
pub fn bce_bwd<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, upstream: f64) -> Tensor<T> {
    let n = pred.numel() as f64;
    let mut dp = Tensor::zeros(pred.shape());
    let dpd = dp.data_mut();
    for (i, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
        let p = clamp01(p.to_f64_());
        let t = t.to_f64_();
        dpd[i] = T::fromf(upstream * ((1.0 - t) / (1.0 - p) - t / p) / n);
    }
    dp
}

/// Sums needed by soft Dice: (sum p*t, sum p, sum t).
fn dice_sums<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (f64, f64, f64) {
    let mut pt = 0.0f64;
    let mut sp = 0.0f64;
    let mut st = 0.0f64;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let p = p.to_f64_();
        let t = t.to_f64_();
        pt += p * t;
        sp += p;
        st += t;
    }
    (pt, sp, st)
}

/// Soft-Dice loss: `1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s)`.
pub fn dice_loss_fwd<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> f64 {
    assert_eq!(pred.shape(), target.shape(), "dice loss: shape mismatch");
    let (pt, sp, st) = dice_sums(pred, target);
    1.0 - (2.0 * pt + DICE_SMOOTH) / (sp + st + DICE_SMOOTH)
}

pub fn dice_loss_bwd<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, upstream: f64) -> Tensor<T> {
    let (pt, sp, st) = dice_sums(pred, target);
    let denom = sp + st + DICE_SMOOTH;
    let numer = 2.0 * pt + DICE_SMOOTH;
    let mut dp = Tensor::zeros(pred.shape());
    let dpd = dp.data_mut();
    for (i, t) in target.data().iter().enumerate() {
        let t = t.to_f64_();
        // d(1 - numer/denom)/dp_i = -(2 t_i denom - numer) / denom^2
        dpd[i] = T::fromf(upstream * (numer - 2.0 * t * denom) / (denom * denom));
    }
    dp
}
