//! Binary segmentation toolkit for colonoscopy polyp masks.
//!
//! The crate is organized around a fixed pipeline:
//!
//! 1. [`dataset`] — scan an image/mask directory into a deterministic,
//!    seeded train/val/test manifest.
//! 2. [`preprocess`] — center crop, bicubic resize, z-score and
//!    ImageNet-constant normalization.
//! 3. [`augment`] — training-time flips, random filter, contrast and
//!    brightness with mask-consistent geometry.
//! 4. [`models`] — U-Net style encoder-decoder models over a registry of
//!    encoder backbones, plus plain U-Net and SegNet baselines.
//! 5. [`trainer`] — Adam training loop with checkpointing and
//!    validation-based model selection.
//! 6. [`metrics`] / [`report`] — pixel confusion counts, Dice / Jaccard /
//!    accuracy, per-image and aggregate reporting.
//!
//! The [`config`] module ties everything to a flat key-value experiment
//! file consumed by the `polypseg` command-line interface.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod imagebuf;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod report;
pub mod trainer;

pub use dataset::{DatasetManifest, ImageSample, Split};
pub use imagebuf::{ImageF32, MaskU8, RgbU8};
pub use metrics::{ConfusionCounts, MetricsResult};
pub use models::{EncoderSpec, ModelCheckpoint, SegmentationModel};
pub use report::MetricsReport;
