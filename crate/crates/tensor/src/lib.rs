//! Minimal CPU tensor and reverse-mode autodiff engine.
//!
//! Everything operates on dense 4-D `[n, c, h, w]` tensors of `f32` or `f64`.
//! A [`Graph`] records operations eagerly; in training mode each op pushes a
//! backward closure onto a tape, in inference mode values flow through as
//! plain tensors and intermediates are freed by ordinary scoping.
//!
//! Convolutions are lowered to GEMM (im2col) and dispatched to the system
//! OpenBLAS when the `blas` feature is enabled (the default), otherwise to
//! the pure-Rust `matrixmultiply` kernels.
//!
//! Layout conventions:
//! - activations: `[n, c, h, w]`, row-major, contiguous
//! - conv weights: `[c_out, c_in / groups, k_h, k_w]`
//! - scalars (losses): shape `[1, 1, 1, 1]`

mod graph;
mod init;
mod optim;
pub mod ops;
mod scalar;
mod store;
mod tensor;

pub use graph::{Graph, Value};
pub use init::InitRng;
pub use optim::{Adam, AdamConfig, AdamState};
pub use scalar::Scalar;
pub use store::{BufferId, Grads, ParamId, ParamStore};
pub use tensor::{PoolIndices, Tensor};

/// Convolution geometry. Kernels may be rectangular (1x7, 7x1, ...);
/// stride is shared by both axes, padding is per-axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvCfg {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ph: usize,
    pub pw: usize,
    pub groups: usize,
}

impl ConvCfg {
    /// Square kernel, stride 1, "same" padding for odd k.
    pub fn same(k: usize) -> Self {
        ConvCfg { kh: k, kw: k, stride: 1, ph: k / 2, pw: k / 2, groups: 1 }
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn with_groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    /// Rectangular kernel with "same" padding, stride 1.
    pub fn rect(kh: usize, kw: usize) -> Self {
        ConvCfg { kh, kw, stride: 1, ph: kh / 2, pw: kw / 2, groups: 1 }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.ph - self.kh) / self.stride + 1,
            (w + 2 * self.pw - self.kw) / self.stride + 1,
        )
    }
}

/// Pooling geometry (max and average pooling share it).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolCfg {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ph: usize,
    pub pw: usize,
}

impl PoolCfg {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        PoolCfg { kh: k, kw: k, stride, ph: pad, pw: pad }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.ph - self.kh) / self.stride + 1,
            (w + 2 * self.pw - self.kw) / self.stride + 1,
        )
    }
}
