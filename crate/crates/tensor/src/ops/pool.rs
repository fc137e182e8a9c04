//! Max / average pooling, global average pooling, and max-unpooling
//! (the SegNet decoder primitive).

use std::sync::Arc;

use rayon::prelude::*;

use crate::{PoolCfg, PoolIndices, Scalar, Tensor};

/// Max pooling; returns the pooled tensor and the argmax indices
/// (flat `h * w` offsets within each `(n, c)` plane, first-wins on ties).
pub fn max_pool_fwd<T: Scalar>(x: &Tensor<T>, cfg: &PoolCfg) -> (Tensor<T>, PoolIndices) {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = cfg.out_hw(h, w);
    let mut y = Tensor::zeros([n, c, ho, wo]);
    let mut idx = vec![0u32; n * c * ho * wo];
    let xd = x.data();
    y.data_mut()
        .par_chunks_mut(ho * wo)
        .zip(idx.par_chunks_mut(ho * wo))
        .enumerate()
        .for_each(|(plane_i, (yp, ip))| {
            let xp = &xd[plane_i * h * w..(plane_i + 1) * h * w];
            for oh in 0..ho {
                let hs = (oh * cfg.stride) as isize - cfg.ph as isize;
                let h0 = hs.max(0) as usize;
                let h1 = ((hs + cfg.kh as isize) as usize).min(h);
                for ow in 0..wo {
                    let ws = (ow * cfg.stride) as isize - cfg.pw as isize;
                    let w0 = ws.max(0) as usize;
                    let w1 = ((ws + cfg.kw as isize) as usize).min(w);
                    let mut best = T::neg_infinity();
                    let mut best_i = 0u32;
                    for ih in h0..h1 {
                        for iw in w0..w1 {
                            let v = xp[ih * w + iw];
                            if v > best {
                                best = v;
                                best_i = (ih * w + iw) as u32;
                            }
                        }
                    }
                    yp[oh * wo + ow] = best;
                    ip[oh * wo + ow] = best_i;
                }
            }
        });
    let indices = PoolIndices { shape: [n, c, ho, wo], data: Arc::new(idx), in_hw: (h, w) };
    (y, indices)
}

pub fn max_pool_bwd<T: Scalar>(dy: &Tensor<T>, idx: &PoolIndices, x_shape: [usize; 4]) -> Tensor<T> {
    let [_, _, h, w] = x_shape;
    let [_, _, ho, wo] = idx.shape;
    let mut dx = Tensor::zeros(x_shape);
    let dyd = dy.data();
    let idd = &idx.data;
    dx.data_mut().par_chunks_mut(h * w).enumerate().for_each(|(plane_i, dxp)| {
        let base = plane_i * ho * wo;
        for o in 0..ho * wo {
            let t = idd[base + o] as usize;
            dxp[t] = dxp[t] + dyd[base + o];
        }
    });
    dx
}

/// SegNet unpooling: scatter `x` into a zero plane of `out_hw` at the
/// positions recorded by the paired max pool. Intended for non-overlapping
/// pooling windows (kernel == stride), where indices are unique.
pub fn max_unpool_fwd<T: Scalar>(x: &Tensor<T>, idx: &PoolIndices) -> Tensor<T> {
    assert_eq!(x.shape(), idx.shape, "unpool: input/indices shape mismatch");
    let [n, c, hi, wi] = x.shape();
    let (h, w) = idx.in_hw;
    let mut y = Tensor::zeros([n, c, h, w]);
    let xd = x.data();
    let idd = &idx.data;
    y.data_mut().par_chunks_mut(h * w).enumerate().for_each(|(plane_i, yp)| {
        let base = plane_i * hi * wi;
        for o in 0..hi * wi {
            yp[idd[base + o] as usize] = xd[base + o];
        }
    });
    y
}

pub fn max_unpool_bwd<T: Scalar>(dy: &Tensor<T>, idx: &PoolIndices) -> Tensor<T> {
    let [n, c, hi, wi] = idx.shape;
    let (h, w) = idx.in_hw;
    let mut dx = Tensor::zeros([n, c, hi, wi]);
    let dyd = dy.data();
    let idd = &idx.data;
    dx.data_mut().par_chunks_mut(hi * wi).enumerate().for_each(|(plane_i, dxp)| {
        let base = plane_i * hi * wi;
        let ybase = plane_i * h * w;
        for o in 0..hi * wi {
            dxp[o] = dyd[ybase + idd[base + o] as usize];
        }
    });
    dx
}

/// Average pooling over valid (non-padding) pixels.
pub fn avg_pool_fwd<T: Scalar>(x: &Tensor<T>, cfg: &PoolCfg) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = cfg.out_hw(h, w);
    let mut y = Tensor::zeros([n, c, ho, wo]);
    let xd = x.data();
    y.data_mut().par_chunks_mut(ho * wo).enumerate().for_each(|(plane_i, yp)| {
        let xp = &xd[plane_i * h * w..(plane_i + 1) * h * w];
        for oh in 0..ho {
            let hs = (oh * cfg.stride) as isize - cfg.ph as isize;
            let h0 = hs.max(0) as usize;
            let h1 = ((hs + cfg.kh as isize) as usize).min(h);
            for ow in 0..wo {
                let ws = (ow * cfg.stride) as isize - cfg.pw as isize;
                let w0 = ws.max(0) as usize;
                let w1 = ((ws + cfg.kw as isize) as usize).min(w);
                let mut acc = 0.0f64;
                for ih in h0..h1 {
                    for iw in w0..w1 {
                        acc += xp[ih * w + iw].to_f64_();
                    }
                }
                let count = ((h1 - h0) * (w1 - w0)).max(1);
                yp[oh * wo + ow] = T::fromf(acc / count as f64);
            }
        }
    });
    y
}

pub fn avg_pool_bwd<T: Scalar>(dy: &Tensor<T>, cfg: &PoolCfg, x_shape: [usize; 4]) -> Tensor<T> {
    let [_, _, h, w] = x_shape;
    let [_, _, ho, wo] = dy.shape();
    let mut dx = Tensor::zeros(x_shape);
    let dyd = dy.data();
    dx.data_mut().par_chunks_mut(h * w).enumerate().for_each(|(plane_i, dxp)| {
        let base = plane_i * ho * wo;
        for oh in 0..ho {
            let hs = (oh * cfg.stride) as isize - cfg.ph as isize;
            let h0 = hs.max(0) as usize;
            let h1 = ((hs + cfg.kh as isize) as usize).min(h);
            for ow in 0..wo {
                let ws = (ow * cfg.stride) as isize - cfg.pw as isize;
                let w0 = ws.max(0) as usize;
                let w1 = ((ws + cfg.kw as isize) as usize).min(w);
                let count = ((h1 - h0) * (w1 - w0)).max(1);
                let share = dyd[base + oh * wo + ow] / T::fromf(count as f64);
                for ih in h0..h1 {
                    for iw in w0..w1 {
                        dxp[ih * w + iw] = dxp[ih * w + iw] + share;
                    }
                }
            }
        }
    });
    dx
}

/// Mean over the spatial plane: `[n, c, h, w] -> [n, c, 1, 1]`.
pub fn global_avg_pool_fwd<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor::zeros([n, c, 1, 1]);
    let xd = x.data();
    let yd = y.data_mut();
    for p in 0..n * c {
        let s: f64 = xd[p * h * w..(p + 1) * h * w].iter().map(|v| v.to_f64_()).sum();
        yd[p] = T::fromf(s / (h * w) as f64);
    }
    y
}

pub fn global_avg_pool_bwd<T: Scalar>(dy: &Tensor<T>, x_shape: [usize; 4]) -> Tensor<T> {
    let [n, c, h, w] = x_shape;
    let mut dx = Tensor::zeros(x_shape);
    let dyd = dy.data();
    let dxd = dx.data_mut();
    for p in 0..n * c {
        let share = dyd[p] / T::fromf((h * w) as f64);
        dxd[p * h * w..(p + 1) * h * w].fill(share);
    }
    dx
}
