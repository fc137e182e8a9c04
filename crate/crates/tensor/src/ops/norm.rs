//! Batch normalization kernels (training and inference forms).

use rayon::prelude::*;

use crate::{Scalar, Tensor};

/// Per-channel batch statistics saved for the backward pass.
pub struct BnSaved<T> {
    pub mean: Vec<f64>,
    pub invstd: Vec<f64>,
    pub x: Tensor<T>,
}

/// Training-mode forward: normalize with the batch statistics.
/// Returns the output plus the saved statistics; the biased variance is
/// returned separately so callers can update running buffers.
pub fn batch_norm_train_fwd<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> (Tensor<T>, BnSaved<T>, Vec<f64>) {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let count = (n * plane) as f64;
    let xd = x.data();

    let stats: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut sum = 0.0f64;
            for img in 0..n {
                let off = (img * c + ch) * plane;
                for v in &xd[off..off + plane] {
                    sum += v.to_f64_();
                }
            }
            let mean = sum / count;
            let mut varsum = 0.0f64;
            for img in 0..n {
                let off = (img * c + ch) * plane;
                for v in &xd[off..off + plane] {
                    let d = v.to_f64_() - mean;
                    varsum += d * d;
                }
            }
            (mean, varsum / count)
        })
        .collect();

    let mean: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let var: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let gd = gamma.data();
    let bd = beta.data();
    let mut y = Tensor::zeros(x.shape());
    y.data_mut().par_chunks_mut(plane).enumerate().for_each(|(p, yp)| {
        let ch = p % c;
        let scale = T::fromf(gd[ch].to_f64_() * invstd[ch]);
        let shift = T::fromf(bd[ch].to_f64_() - mean[ch] * gd[ch].to_f64_() * invstd[ch]);
        let xp = &xd[p * plane..(p + 1) * plane];
        for (o, v) in yp.iter_mut().zip(xp) {
            *o = *v * scale + shift;
        }
    });

    (y, BnSaved { mean, invstd, x: x.clone() }, var)
}

/// Training-mode backward. Returns (dx, dgamma, dbeta).
pub fn batch_norm_bwd<T: Scalar>(
    dy: &Tensor<T>,
    saved: &BnSaved<T>,
    gamma: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = saved.x.shape();
    let plane = h * w;
    let count = (n * plane) as f64;
    let xd = saved.x.data();
    let dyd = dy.data();
    let gd = gamma.data();

    // Per-channel reductions.
    let sums: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mean = saved.mean[ch];
            let invstd = saved.invstd[ch];
            let mut dbeta = 0.0f64;
            let mut dgamma = 0.0f64;
            for img in 0..n {
                let off = (img * c + ch) * plane;
                for i in 0..plane {
                    let g = dyd[off + i].to_f64_();
                    let xhat = (xd[off + i].to_f64_() - mean) * invstd;
                    dbeta += g;
                    dgamma += g * xhat;
                }
            }
            (dbeta, dgamma)
        })
        .collect();

    let mut dgamma_t = Tensor::zeros([1, c, 1, 1]);
    let mut dbeta_t = Tensor::zeros([1, c, 1, 1]);
    for ch in 0..c {
        dbeta_t.data_mut()[ch] = T::fromf(sums[ch].0);
        dgamma_t.data_mut()[ch] = T::fromf(sums[ch].1);
    }

    // dx = a*dy + b*x + c with per-channel constants:
    //   a = gamma * invstd
    //   b = -a * invstd * dgamma / N
    //   c = a * (invstd * mean * dgamma - dbeta) / N
    let consts: Vec<(T, T, T)> = (0..c)
        .map(|ch| {
            let (dbeta, dgamma) = sums[ch];
            let invstd = saved.invstd[ch];
            let a = gd[ch].to_f64_() * invstd;
            let b = -a * invstd * dgamma / count;
            let cc = a * (invstd * saved.mean[ch] * dgamma - dbeta) / count;
            (T::fromf(a), T::fromf(b), T::fromf(cc))
        })
        .collect();
    let mut dx = Tensor::zeros(saved.x.shape());
    dx.data_mut().par_chunks_mut(plane).enumerate().for_each(|(p, dxp)| {
        let (a, b, cc) = consts[p % c];
        let xp = &xd[p * plane..(p + 1) * plane];
        let dyp = &dyd[p * plane..(p + 1) * plane];
        for i in 0..plane {
            dxp[i] = a * dyp[i] + b * xp[i] + cc;
        }
    });

    (dx, dgamma_t, dbeta_t)
}

/// Inference-mode forward using running statistics (a per-channel affine map).
pub fn batch_norm_eval_fwd<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Tensor<T> {
    let [_, c, h, w] = x.shape();
    let plane = h * w;
    let gd = gamma.data();
    let bd = beta.data();
    let rm = running_mean.data();
    let rv = running_var.data();
    let scale: Vec<T> = (0..c)
        .map(|ch| T::fromf(gd[ch].to_f64_() / (rv[ch].to_f64_() + eps).sqrt()))
        .collect();
    let shift: Vec<T> = (0..c)
        .map(|ch| T::fromf(bd[ch].to_f64_() - rm[ch].to_f64_() * scale[ch].to_f64_()))
        .collect();
    let xd = x.data();
    let mut y = Tensor::zeros(x.shape());
    y.data_mut().par_chunks_mut(plane).enumerate().for_each(|(p, yp)| {
        let ch = p % c;
        let (sc, sh) = (scale[ch], shift[ch]);
        let xp = &xd[p * plane..(p + 1) * plane];
        for (o, v) in yp.iter_mut().zip(xp) {
            *o = *v * sc + sh;
        }
    });
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_forward_standardizes_each_channel() {
        let vals: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| ((i * 13 % 31) as f64) * 0.7 - 5.0).collect();
        let x = Tensor::from_vec([2, 3, 4, 4], vals);
        let gamma = Tensor::from_vec([1, 3, 1, 1], vec![1.0; 3]);
        let beta = Tensor::from_vec([1, 3, 1, 1], vec![0.0; 3]);
        let (y, _, _) = batch_norm_train_fwd(&x, &gamma, &beta, 1e-5);
        // Each channel of y should have ~zero mean and ~unit variance.
        let [n, c, h, w] = y.shape();
        for ch in 0..c {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for img in 0..n {
                for i in 0..h * w {
                    let v = y.data()[(img * c + ch) * h * w + i];
                    sum += v;
                    sq += v * v;
                }
            }
            let cnt = (n * h * w) as f64;
            let mean = sum / cnt;
            let var = sq / cnt - mean * mean;
            assert!(mean.abs() < 1e-10, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ch} var {var}");
        }
    }

    #[test]
    fn backward_matches_finite_difference() {
        let vals: Vec<f64> = (0..1 * 2 * 3 * 3).map(|i| ((i * 7 % 11) as f64) * 0.3 - 1.0).collect();
        let x = Tensor::from_vec([1, 2, 3, 3], vals);
        let gamma = Tensor::from_vec([1, 2, 1, 1], vec![1.3, 0.8]);
        let beta = Tensor::from_vec([1, 2, 1, 1], vec![0.1, -0.2]);
        let eps = 1e-5;
        let lw: Vec<f64> = (0..18).map(|i| ((i % 5) as f64) * 0.37 - 0.9).collect();
        let loss = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            let (y, _, _) = batch_norm_train_fwd(x, g, b, eps);
            y.data().iter().zip(&lw).map(|(a, c)| a * c).sum()
        };
        let (_, saved, _) = batch_norm_train_fwd(&x, &gamma, &beta, eps);
        let dy = Tensor::from_vec([1, 2, 3, 3], lw.clone());
        let (dx, dgamma, dbeta) = batch_norm_bwd(&dy, &saved, &gamma);

        let h = 1e-6;
        for idx in [0usize, 7, 17] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (loss(&xp, &gamma, &beta) - loss(&xm, &gamma, &beta)) / (2.0 * h);
            assert!((dx.data()[idx] - fd).abs() < 1e-5, "dx[{idx}]: {} vs {}", dx.data()[idx], fd);
        }
        for ch in 0..2 {
            let mut gp = gamma.clone();
            gp.data_mut()[ch] += h;
            let mut gm = gamma.clone();
            gm.data_mut()[ch] -= h;
            let fd = (loss(&x, &gp, &beta) - loss(&x, &gm, &beta)) / (2.0 * h);
            assert!((dgamma.data()[ch] - fd).abs() < 1e-5, "dgamma[{ch}]");
            let mut bp = beta.clone();
            bp.data_mut()[ch] += h;
            let mut bm = beta.clone();
            bm.data_mut()[ch] -= h;
            let fd = (loss(&x, &gamma, &bp) - loss(&x, &gamma, &bm)) / (2.0 * h);
            assert!((dbeta.data()[ch] - fd).abs() < 1e-5, "dbeta[{ch}]");
        }
    }

    #[test]
    fn eval_forward_is_affine_in_running_stats() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![3.0f64, 5.0]);
        let gamma = Tensor::from_vec([1, 1, 1, 1], vec![2.0]);
        let beta = Tensor::from_vec([1, 1, 1, 1], vec![1.0]);
        let rm = Tensor::from_vec([1, 1, 1, 1], vec![4.0]);
        let rv = Tensor::from_vec([1, 1, 1, 1], vec![4.0]);
        let y = batch_norm_eval_fwd(&x, &gamma, &beta, &rm, &rv, 0.0);
        // (x - 4) / 2 * 2 + 1
        assert!((y.data()[0] - 0.0).abs() < 1e-12);
        assert!((y.data()[1] - 2.0).abs() < 1e-12);
    }
}
