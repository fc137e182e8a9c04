//! 2-D convolution lowered to GEMM via im2col, with chunking over output
//! positions to bound buffer sizes.

use rayon::prelude::*;

use crate::{ConvCfg, Scalar, Tensor};

/// Cap on im2col buffer elements (~16 MB for f32).
const COL_BUDGET: usize = 4 << 20;

fn col_chunk_len(k: usize, l: usize) -> usize {
    (COL_BUDGET / k.max(1)).clamp(1, l.max(1))
}

/// Fill `col` (row-major `[k_rows x chunk]`) from one image's group channels.
/// `x_g` is the `[c_in_g, h, w]` slice, positions `p0..p0+chunk` are flat
/// output offsets `oh * wo + ow`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x_g: &[T],
    h: usize,
    w: usize,
    wo: usize,
    cfg: &ConvCfg,
    p0: usize,
    chunk: usize,
    col: &mut [T],
) {
    let ConvCfg { kh, kw, stride, ph, pw, .. } = *cfg;
    let rows = col.len() / chunk;
    col.par_chunks_mut(chunk).enumerate().for_each(|(row, out)| {
        debug_assert!(row < rows);
        let c = row / (kh * kw);
        let ki = (row / kw) % kh;
        let kj = row % kw;
        let plane = &x_g[c * h * w..(c + 1) * h * w];
        let mut p = p0;
        let mut written = 0;
        while written < chunk {
            let oh = p / wo;
            let ow0 = p % wo;
            let run = (wo - ow0).min(chunk - written);
            let ih = (oh * stride + ki) as isize - ph as isize;
            if ih < 0 || ih as usize >= h {
                out[written..written + run].fill(T::zero());
            } else {
                let ih = ih as usize;
                let row = &plane[ih * w..(ih + 1) * w];
                let seg = &mut out[written..written + run];
                // iw = (ow0 + j) * stride + kj - pw; valid j range is
                // [j0, j1) where 0 <= iw < w.
                let base = (ow0 * stride + kj) as isize - pw as isize;
                let j0 = if base >= 0 {
                    0
                } else {
                    ((-base) as usize).div_ceil(stride)
                };
                let j1 = if (w as isize) <= base {
                    0
                } else {
                    (((w as isize - base - 1) as usize) / stride + 1).min(run)
                };
                let j0 = j0.min(run);
                seg[..j0].fill(T::zero());
                if j1 > j0 {
                    let start = (base + (j0 * stride) as isize) as usize;
                    if stride == 1 {
                        seg[j0..j1].copy_from_slice(&row[start..start + (j1 - j0)]);
                    } else {
                        let mut iw = start;
                        for o in seg[j0..j1].iter_mut() {
                            *o = row[iw];
                            iw += stride;
                        }
                    }
                }
                if j1 < run {
                    seg[j1.max(j0)..].fill(T::zero());
                }
            }
            written += run;
            p += run;
        }
    });
}

/// Scatter-add `col` (row-major `[k_rows x chunk]`) back into one image's
/// group channels. Parallel over channels; rows of different channels never
/// alias.
#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(
    col: &[T],
    h: usize,
    w: usize,
    wo: usize,
    cfg: &ConvCfg,
    p0: usize,
    chunk: usize,
    dx_g: &mut [T],
) {
    let ConvCfg { kh, kw, stride, ph, pw, .. } = *cfg;
    dx_g.par_chunks_mut(h * w).enumerate().for_each(|(c, plane)| {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &col[row * chunk..(row + 1) * chunk];
                for (off, &v) in src.iter().enumerate() {
                    let p = p0 + off;
                    let oh = p / wo;
                    let ow = p % wo;
                    let ih = (oh * stride + ki) as isize - ph as isize;
                    let iw = (ow * stride + kj) as isize - pw as isize;
                    if ih >= 0 && (ih as usize) < h && iw >= 0 && (iw as usize) < w {
                        let idx = ih as usize * w + iw as usize;
                        plane[idx] = plane[idx] + v;
                    }
                }
            }
        }
    });
}

/// Forward convolution. `x: [n, c_in, h, w]`, `w: [c_out, c_in/g, kh, kw]`,
/// optional `bias: [1, c_out, 1, 1]`.
pub fn conv2d_fwd<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    cfg: &ConvCfg,
) -> Tensor<T> {
    let [n, cin, h, w] = x.shape();
    let [cout, cin_g, kh, kw] = weight.shape();
    let g = cfg.groups;
    assert_eq!(cin, cin_g * g, "conv2d: input channels {cin} != {cin_g} * groups {g}");
    assert_eq!(kh, cfg.kh);
    assert_eq!(kw, cfg.kw);
    assert_eq!(cout % g, 0, "conv2d: c_out not divisible by groups");
    let (ho, wo) = cfg.out_hw(h, w);
    let l = ho * wo;
    let k = cin_g * kh * kw;
    let cout_g = cout / g;

    let mut y = Tensor::zeros([n, cout, ho, wo]);
    let xd = x.data();
    let wd = weight.data();
    let yd = y.data_mut();

    // Fast path: 1x1, stride 1, no padding — the input already is the col
    // matrix, and with groups == 1 the output plane is written directly.
    let direct_1x1 = kh == 1 && kw == 1 && cfg.stride == 1 && cfg.ph == 0 && cfg.pw == 0;

    let chunk_len = col_chunk_len(k, l);
    let mut col = vec![T::zero(); k * chunk_len];
    let mut tmp = vec![T::zero(); cout_g * chunk_len];

    for img in 0..n {
        for grp in 0..g {
            let x_g = &xd[(img * cin + grp * cin_g) * h * w..(img * cin + (grp + 1) * cin_g) * h * w];
            let w_g = &wd[grp * cout_g * k..(grp + 1) * cout_g * k];
            let y_off = (img * cout + grp * cout_g) * l;
            if direct_1x1 {
                T::gemm(cout_g, l, k, T::one(), w_g, false, x_g, false, T::zero(), &mut yd[y_off..y_off + cout_g * l]);
            } else {
                let mut p0 = 0;
                while p0 < l {
                    let chunk = chunk_len.min(l - p0);
                    im2col(x_g, h, w, wo, cfg, p0, chunk, &mut col[..k * chunk]);
                    if chunk == l {
                        T::gemm(
                            cout_g,
                            l,
                            k,
                            T::one(),
                            w_g,
                            false,
                            &col[..k * l],
                            false,
                            T::zero(),
                            &mut yd[y_off..y_off + cout_g * l],
                        );
                    } else {
                        T::gemm(
                            cout_g,
                            chunk,
                            k,
                            T::one(),
                            w_g,
                            false,
                            &col[..k * chunk],
                            false,
                            T::zero(),
                            &mut tmp[..cout_g * chunk],
                        );
                        for co in 0..cout_g {
                            let dst = y_off + co * l + p0;
                            yd[dst..dst + chunk].copy_from_slice(&tmp[co * chunk..co * chunk + chunk]);
                        }
                    }
                    p0 += chunk;
                }
            }
        }
    }

    if let Some(b) = bias {
        assert_eq!(b.numel(), cout, "conv2d: bias length");
        let bd: Vec<T> = b.data().to_vec();
        y.data_mut().par_chunks_mut(l).enumerate().for_each(|(pc, plane)| {
            let bv = bd[pc % cout];
            for v in plane {
                *v = *v + bv;
            }
        });
    }
    y
}

/// Gradient w.r.t. the convolution input.
pub fn conv2d_bwd_input<T: Scalar>(
    dy: &Tensor<T>,
    weight: &Tensor<T>,
    cfg: &ConvCfg,
    x_shape: [usize; 4],
) -> Tensor<T> {
    let [n, cin, h, w] = x_shape;
    let [cout, cin_g, kh, kw] = weight.shape();
    let g = cfg.groups;
    let cout_g = cout / g;
    let (ho, wo) = cfg.out_hw(h, w);
    let l = ho * wo;
    let k = cin_g * kh * kw;

    let mut dx = Tensor::zeros(x_shape);
    let dyd = dy.data();
    let wd = weight.data();
    let dxd = dx.data_mut();

    let direct_1x1 = kh == 1 && kw == 1 && cfg.stride == 1 && cfg.ph == 0 && cfg.pw == 0;
    let chunk_len = col_chunk_len(k, l);
    let mut col = vec![T::zero(); k * chunk_len];
    let mut dy_tmp = vec![T::zero(); cout_g * chunk_len];

    for img in 0..n {
        for grp in 0..g {
            let w_g = &wd[grp * cout_g * k..(grp + 1) * cout_g * k];
            let dy_off = (img * cout + grp * cout_g) * l;
            let dx_g = &mut dxd[(img * cin + grp * cin_g) * h * w..(img * cin + (grp + 1) * cin_g) * h * w];
            if direct_1x1 {
                T::gemm(
                    k,
                    l,
                    cout_g,
                    T::one(),
                    w_g,
                    true,
                    &dyd[dy_off..dy_off + cout_g * l],
                    false,
                    T::zero(),
                    dx_g,
                );
                continue;
            }
            let mut p0 = 0;
            while p0 < l {
                let chunk = chunk_len.min(l - p0);
                let dy_chunk: &[T] = if chunk == l {
                    &dyd[dy_off..dy_off + cout_g * l]
                } else {
                    for co in 0..cout_g {
                        let src = dy_off + co * l + p0;
                        dy_tmp[co * chunk..co * chunk + chunk].copy_from_slice(&dyd[src..src + chunk]);
                    }
                    &dy_tmp[..cout_g * chunk]
                };
                T::gemm(k, chunk, cout_g, T::one(), w_g, true, dy_chunk, false, T::zero(), &mut col[..k * chunk]);
                col2im_add(&col[..k * chunk], h, w, wo, cfg, p0, chunk, dx_g);
                p0 += chunk;
            }
        }
    }
    dx
}

/// Gradients w.r.t. weight and (optionally) bias.
pub fn conv2d_bwd_weight<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    cfg: &ConvCfg,
    w_shape: [usize; 4],
    with_bias: bool,
) -> (Tensor<T>, Option<Tensor<T>>) {
    let [n, cin, h, w] = x.shape();
    let [cout, cin_g, kh, kw] = w_shape;
    let g = cfg.groups;
    let cout_g = cout / g;
    let (ho, wo) = cfg.out_hw(h, w);
    let l = ho * wo;
    let k = cin_g * kh * kw;

    let mut dw = Tensor::zeros(w_shape);
    let xd = x.data();
    let dyd = dy.data();
    let dwd = dw.data_mut();

    let direct_1x1 = kh == 1 && kw == 1 && cfg.stride == 1 && cfg.ph == 0 && cfg.pw == 0;
    let chunk_len = col_chunk_len(k, l);
    let mut col = vec![T::zero(); k * chunk_len];
    let mut dy_tmp = vec![T::zero(); cout_g * chunk_len];

    for img in 0..n {
        for grp in 0..g {
            let x_g = &xd[(img * cin + grp * cin_g) * h * w..(img * cin + (grp + 1) * cin_g) * h * w];
            let dy_off = (img * cout + grp * cout_g) * l;
            let dw_g = &mut dwd[grp * cout_g * k..(grp + 1) * cout_g * k];
            if direct_1x1 {
                T::gemm(
                    cout_g,
                    k,
                    l,
                    T::one(),
                    &dyd[dy_off..dy_off + cout_g * l],
                    false,
                    x_g,
                    true,
                    T::one(),
                    dw_g,
                );
                continue;
            }
            let mut p0 = 0;
            while p0 < l {
                let chunk = chunk_len.min(l - p0);
                im2col(x_g, h, w, wo, cfg, p0, chunk, &mut col[..k * chunk]);
                let dy_chunk: &[T] = if chunk == l {
                    &dyd[dy_off..dy_off + cout_g * l]
                } else {
                    for co in 0..cout_g {
                        let src = dy_off + co * l + p0;
                        dy_tmp[co * chunk..co * chunk + chunk].copy_from_slice(&dyd[src..src + chunk]);
                    }
                    &dy_tmp[..cout_g * chunk]
                };
                T::gemm(cout_g, k, chunk, T::one(), dy_chunk, false, &col[..k * chunk], true, T::one(), dw_g);
                p0 += chunk;
            }
        }
    }

    let db = if with_bias {
        let mut db = Tensor::zeros([1, cout, 1, 1]);
        let dbd = db.data_mut();
        for img in 0..n {
            for c in 0..cout {
                let off = (img * cout + c) * l;
                let s: f64 = dyd[off..off + l].iter().map(|v| v.to_f64_()).sum();
                dbd[c] = dbd[c] + T::fromf(s);
            }
        }
        Some(db)
    } else {
        None
    };
    (dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv<T: Scalar>(
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        cfg: &ConvCfg,
    ) -> Tensor<T> {
        let [n, cin, h, w] = x.shape();
        let [cout, cin_g, kh, kw] = weight.shape();
        let g = cfg.groups;
        let cout_g = cout / g;
        let (ho, wo) = cfg.out_hw(h, w);
        let mut y = Tensor::zeros([n, cout, ho, wo]);
        let yd = y.data_mut();
        for img in 0..n {
            for co in 0..cout {
                let grp = co / cout_g;
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = bias.map(|b| b.data()[co]).unwrap_or_else(T::zero);
                        for ci in 0..cin_g {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ih = (oh * cfg.stride + ki) as isize - cfg.ph as isize;
                                    let iw = (ow * cfg.stride + kj) as isize - cfg.pw as isize;
                                    if ih >= 0 && (ih as usize) < h && iw >= 0 && (iw as usize) < w {
                                        let xv = x.at(img, grp * cin_g + ci, ih as usize, iw as usize);
                                        let wv = weight.data()[((co * cin_g + ci) * kh + ki) * kw + kj];
                                        acc = acc + xv * wv;
                                    }
                                }
                            }
                        }
                        yd[((img * cout + co) * ho + oh) * wo + ow] = acc;
                    }
                }
            }
        }
        y
    }

    fn arange_tensor(shape: [usize; 4]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 37 % 23) as f64 - 11.0) * 0.13).collect())
    }

    #[test]
    fn conv_forward_matches_naive() {
        let cases = vec![
            ([2, 3, 7, 9], [4, 3, 3, 3], ConvCfg::same(3)),
            ([1, 3, 8, 8], [6, 3, 3, 3], ConvCfg::same(3).with_stride(2)),
            ([2, 4, 5, 5], [8, 4, 1, 1], ConvCfg { kh: 1, kw: 1, stride: 1, ph: 0, pw: 0, groups: 1 }),
            ([1, 3, 9, 9], [5, 3, 7, 7], ConvCfg { kh: 7, kw: 7, stride: 2, ph: 3, pw: 3, groups: 1 }),
            ([1, 4, 6, 6], [4, 2, 3, 3], ConvCfg::same(3).with_groups(2)),
            ([1, 2, 6, 6], [3, 2, 1, 7], ConvCfg::rect(1, 7)),
            ([1, 2, 6, 6], [3, 2, 7, 1], ConvCfg::rect(7, 1)),
            ([1, 3, 10, 10], [2, 3, 5, 5], ConvCfg { kh: 5, kw: 5, stride: 1, ph: 2, pw: 2, groups: 1 }),
        ];
        for (xs, ws, cfg) in cases {
            let x = arange_tensor(xs);
            let w = arange_tensor(ws);
            let b = Tensor::from_vec([1, ws[0], 1, 1], (0..ws[0]).map(|i| i as f64 * 0.5 - 1.0).collect());
            let got = conv2d_fwd(&x, &w, Some(&b), &cfg);
            let want = naive_conv(&x, &w, Some(&b), &cfg);
            assert_eq!(got.shape(), want.shape(), "{cfg:?}");
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-9, "{cfg:?}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_forward_chunked_matches_unchunked() {
        // Force chunking by exceeding the col budget fraction with a big image.
        let x = arange_tensor([1, 2, 40, 40]);
        let w = arange_tensor([3, 2, 3, 3]);
        let cfg = ConvCfg::same(3);
        let got = conv2d_fwd(&x, &w, None, &cfg);
        let want = naive_conv(&x, &w, None, &cfg);
        for (a, e) in got.data().iter().zip(want.data()) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let cfgs = vec![
            ([1, 2, 5, 6], [3, 2, 3, 3], ConvCfg::same(3)),
            ([2, 2, 6, 6], [2, 2, 3, 3], ConvCfg::same(3).with_stride(2)),
            ([1, 4, 4, 4], [4, 2, 3, 3], ConvCfg::same(3).with_groups(2)),
            ([1, 2, 5, 5], [2, 2, 1, 3], ConvCfg::rect(1, 3)),
        ];
        for (xs, ws, cfg) in cfgs {
            let x = arange_tensor(xs);
            let w = arange_tensor(ws);
            let b = Tensor::from_vec([1, ws[0], 1, 1], vec![0.3; ws[0]]);
            // Loss = sum(conv(x)) with per-element weights to break symmetry.
            let y = conv2d_fwd(&x, &w, Some(&b), &cfg);
            let lw: Vec<f64> = (0..y.numel()).map(|i| ((i % 7) as f64) * 0.21 - 0.5).collect();
            let dy = Tensor::from_vec(y.shape(), lw.clone());
            let loss = |y: &Tensor<f64>| -> f64 {
                y.data().iter().zip(&lw).map(|(a, b)| a * b).sum()
            };

            let dx = conv2d_bwd_input(&dy, &w, &cfg, xs);
            let (dw, db) = conv2d_bwd_weight(&dy, &x, &cfg, ws, true);

            let h = 1e-5;
            // Sample a few coordinates of each gradient.
            for idx in [0usize, xs.iter().product::<usize>() / 2, xs.iter().product::<usize>() - 1] {
                let mut xp = x.clone();
                xp.data_mut()[idx] += h;
                let mut xm = x.clone();
                xm.data_mut()[idx] -= h;
                let fd = (loss(&conv2d_fwd(&xp, &w, Some(&b), &cfg))
                    - loss(&conv2d_fwd(&xm, &w, Some(&b), &cfg)))
                    / (2.0 * h);
                assert!((dx.data()[idx] - fd).abs() < 1e-6, "dx[{idx}] {cfg:?}");
            }
            for idx in [0usize, ws.iter().product::<usize>() / 2, ws.iter().product::<usize>() - 1] {
                let mut wp = w.clone();
                wp.data_mut()[idx] += h;
                let mut wm = w.clone();
                wm.data_mut()[idx] -= h;
                let fd = (loss(&conv2d_fwd(&x, &wp, Some(&b), &cfg))
                    - loss(&conv2d_fwd(&x, &wm, Some(&b), &cfg)))
                    / (2.0 * h);
                assert!((dw.data()[idx] - fd).abs() < 1e-6, "dw[{idx}] {cfg:?}");
            }
            let db = db.unwrap();
            let mut bp = b.clone();
            bp.data_mut()[0] += h;
            let mut bm = b.clone();
            bm.data_mut()[0] -= h;
            let fd = (loss(&conv2d_fwd(&x, &w, Some(&bp), &cfg))
                - loss(&conv2d_fwd(&x, &w, Some(&bm), &cfg)))
                / (2.0 * h);
            assert!((db.data()[0] - fd).abs() < 1e-6, "db {cfg:?}");
        }
    }
}
