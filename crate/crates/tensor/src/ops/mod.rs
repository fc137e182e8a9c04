//! Forward and backward kernels. The [`crate::Graph`] wires these into the
//! autodiff tape; they are also usable directly for inference-only paths.

pub mod conv;
pub mod elementwise;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod resample;
