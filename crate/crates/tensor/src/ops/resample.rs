//! Nearest-neighbor 2x upsampling (decoder upscaling primitive).

use rayon::prelude::*;

use crate::{Scalar, Tensor};

pub fn upsample_nearest2_fwd<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (h2, w2) = (h * 2, w * 2);
    let mut y = Tensor::zeros([n, c, h2, w2]);
    let xd = x.data();
    y.data_mut().par_chunks_mut(h2 * w2).enumerate().for_each(|(p, yp)| {
        let xp = &xd[p * h * w..(p + 1) * h * w];
        for oh in 0..h2 {
            let ih = oh / 2;
            let src = &xp[ih * w..(ih + 1) * w];
            let dst = &mut yp[oh * w2..(oh + 1) * w2];
            for iw in 0..w {
                dst[2 * iw] = src[iw];
                dst[2 * iw + 1] = src[iw];
            }
        }
    });
    y
}

/// Each input pixel receives the sum of its four upsampled children.
pub fn upsample_nearest2_bwd<T: Scalar>(dy: &Tensor<T>, x_shape: [usize; 4]) -> Tensor<T> {
    let [_, _, h, w] = x_shape;
    let (h2, w2) = (h * 2, w * 2);
    let dyd = dy.data();
    let mut dx = Tensor::zeros(x_shape);
    dx.data_mut().par_chunks_mut(h * w).enumerate().for_each(|(p, dxp)| {
        let dyp = &dyd[p * h2 * w2..(p + 1) * h2 * w2];
        for ih in 0..h {
            for iw in 0..w {
                let a = dyp[(2 * ih) * w2 + 2 * iw];
                let b = dyp[(2 * ih) * w2 + 2 * iw + 1];
                let c = dyp[(2 * ih + 1) * w2 + 2 * iw];
                let d = dyp[(2 * ih + 1) * w2 + 2 * iw + 1];
                dxp[ih * w + iw] = a + b + c + d;
            }
        }
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_doubles_and_replicates() {
        let x = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = upsample_nearest2_fwd(&x);
        assert_eq!(y.shape(), [1, 1, 4, 4]);
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn backward_sums_children() {
        let dy = Tensor::<f32>::from_vec([1, 1, 4, 4], vec![1.0; 16]);
        let dx = upsample_nearest2_bwd(&dy, [1, 1, 2, 2]);
        assert_eq!(dx.data(), &[4.0, 4.0, 4.0, 4.0]);
    }
}
