//! Pointwise and structural ops: activations, residual add, channel
//! concatenation, SE channel scaling.

use rayon::prelude::*;

use crate::{Scalar, Tensor};

const PAR_THRESHOLD: usize = 1 << 16;

fn map_unary<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T + Sync) -> Tensor<T> {
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let yd = y.data_mut();
    if xd.len() >= PAR_THRESHOLD {
        yd.par_chunks_mut(PAR_THRESHOLD).zip(xd.par_chunks(PAR_THRESHOLD)).for_each(|(o, i)| {
            for (a, b) in o.iter_mut().zip(i) {
                *a = f(*b);
            }
        });
    } else {
        for (a, b) in yd.iter_mut().zip(xd) {
            *a = f(*b);
        }
    }
    y
}

pub fn relu_fwd<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    map_unary(x, |v| if v > T::zero() { v } else { T::zero() })
}

/// dx = dy where the forward output was positive.
pub fn relu_bwd<T: Scalar>(dy: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(dy.shape());
    let dyd = dy.data();
    let yd = y.data();
    dx.data_mut()
        .par_chunks_mut(PAR_THRESHOLD)
        .zip(dyd.par_chunks(PAR_THRESHOLD))
        .zip(yd.par_chunks(PAR_THRESHOLD))
        .for_each(|((dxc, dyc), yc)| {
            for i in 0..dxc.len() {
                dxc[i] = if yc[i] > T::zero() { dyc[i] } else { T::zero() };
            }
        });
    dx
}

pub fn sigmoid_fwd<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    map_unary(x, |v| {
        // Numerically stable in both tails.
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

pub fn sigmoid_bwd<T: Scalar>(dy: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(dy.shape());
    let dyd = dy.data();
    let yd = y.data();
    let dxd = dx.data_mut();
    for i in 0..dyd.len() {
        dxd[i] = dyd[i] * yd[i] * (T::one() - yd[i]);
    }
    dx
}

pub fn add_fwd<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
    let mut y = a.clone();
    y.add_assign(b);
    y
}

/// Concatenate along the channel axis.
pub fn concat_channels_fwd<T: Scalar>(inputs: &[&Tensor<T>]) -> Tensor<T> {
    assert!(!inputs.is_empty());
    let [n, _, h, w] = inputs[0].shape();
    let c_total: usize = inputs.iter().map(|t| t.c()).sum();
    for t in inputs {
        assert_eq!(t.n(), n, "concat: batch mismatch");
        assert_eq!((t.h(), t.w()), (h, w), "concat: spatial mismatch");
    }
    let mut y = Tensor::zeros([n, c_total, h, w]);
    let plane = h * w;
    let yd = y.data_mut();
    for img in 0..n {
        let mut co = 0;
        for t in inputs {
            let c = t.c();
            let src = &t.data()[img * c * plane..(img + 1) * c * plane];
            let dst = (img * c_total + co) * plane;
            yd[dst..dst + c * plane].copy_from_slice(src);
            co += c;
        }
    }
    y
}

/// Slice the gradient of a channel concatenation back apart.
pub fn concat_channels_bwd<T: Scalar>(dy: &Tensor<T>, channel_counts: &[usize]) -> Vec<Tensor<T>> {
    let [n, c_total, h, w] = dy.shape();
    assert_eq!(channel_counts.iter().sum::<usize>(), c_total);
    let plane = h * w;
    let dyd = dy.data();
    let mut out = Vec::with_capacity(channel_counts.len());
    let mut co = 0;
    for &c in channel_counts {
        let mut g = Tensor::zeros([n, c, h, w]);
        let gd = g.data_mut();
        for img in 0..n {
            let src = (img * c_total + co) * plane;
            gd[img * c * plane..(img + 1) * c * plane].copy_from_slice(&dyd[src..src + c * plane]);
        }
        out.push(g);
        co += c;
    }
    out
}

/// Multiply every `(n, c)` plane of `x` by the matching scalar of
/// `gate: [n, c, 1, 1]` (squeeze-and-excitation recalibration).
pub fn scale_channels_fwd<T: Scalar>(x: &Tensor<T>, gate: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    assert_eq!(gate.shape(), [n, c, 1, 1], "scale_channels: gate shape");
    let plane = h * w;
    let xd = x.data();
    let gd = gate.data();
    let mut y = Tensor::zeros(x.shape());
    y.data_mut().par_chunks_mut(plane).enumerate().for_each(|(p, yp)| {
        let g = gd[p];
        let xp = &xd[p * plane..(p + 1) * plane];
        for (o, v) in yp.iter_mut().zip(xp) {
            *o = *v * g;
        }
    });
    y
}

/// Returns (dx, dgate).
pub fn scale_channels_bwd<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    gate: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let dyd = dy.data();
    let xd = x.data();
    let gd = gate.data();

    let mut dx = Tensor::zeros(x.shape());
    dx.data_mut().par_chunks_mut(plane).enumerate().for_each(|(p, dxp)| {
        let g = gd[p];
        let dyp = &dyd[p * plane..(p + 1) * plane];
        for (o, v) in dxp.iter_mut().zip(dyp) {
            *o = *v * g;
        }
    });

    let mut dgate = Tensor::zeros([n, c, 1, 1]);
    let dgd = dgate.data_mut();
    for p in 0..n * c {
        let mut acc = 0.0f64;
        for i in 0..plane {
            acc += dyd[p * plane + i].to_f64_() * xd[p * plane + i].to_f64_();
        }
        dgd[p] = T::fromf(acc);
    }
    (dx, dgate)
}
