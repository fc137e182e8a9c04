//! Deterministic preprocessing: center crop, bicubic resize, per-image
//! z-score standardization and ImageNet-constant normalization.
//!
//! Geometry ops treat images and masks symmetrically (masks use
//! nearest-neighbor resampling and are re-binarized) so a pixel keeps its
//! label through the pipeline.

use thiserror::Error;

use crate::imagebuf::{ImageF32, MaskU8};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("crop target {target_w}x{target_h} exceeds source {src_w}x{src_h}")]
    TargetExceedsSource { target_w: usize, target_h: usize, src_w: usize, src_h: usize },
    #[error("resize target must be positive, got {0}x{1}")]
    NonPositiveTarget(usize, usize),
    #[error("expected a 3-channel image, got {0} channels")]
    WrongChannelCount(usize),
    #[error("network input {0}x{1} is not divisible by 32")]
    InputNotDivisible(usize, usize),
}

/// Normalization constants and switches.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationSpec {
    pub apply_zscore: bool,
    pub apply_imagenet: bool,
    /// Per-channel means on the 0–255 scale, RGB order.
    pub imagenet_mean: [f64; 3],
    /// Per-channel standard deviations on the 0–255 scale.
    pub imagenet_std: [f64; 3],
    pub epsilon: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        // The standard published ImageNet statistics, scaled to 0–255:
        // mean (0.485, 0.456, 0.406) * 255, std (0.229, 0.224, 0.225) * 255.
        NormalizationSpec {
            apply_zscore: false,
            apply_imagenet: true,
            imagenet_mean: [123.675, 116.28, 103.53],
            imagenet_std: [58.395, 57.12, 57.375],
            epsilon: 1e-7,
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.imagenet_std.iter().any(|&s| s <= 0.0) {
            return Err("imagenet_std components must be strictly positive".into());
        }
        if self.epsilon <= 0.0 {
            return Err("epsilon must be positive".into());
        }
        Ok(())
    }
}

/// Geometry and normalization settings for the full preprocessing pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    /// Center-crop target (width, height).
    pub crop: (usize, usize),
    /// Network input size (width, height); both must be divisible by 32.
    pub network_input: (usize, usize),
    pub normalization: NormalizationSpec,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            crop: (500, 500),
            network_input: (512, 512),
            normalization: NormalizationSpec::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.network_input.0 % 32 != 0 || self.network_input.1 % 32 != 0 {
            return Err(PreprocessError::InputNotDivisible(self.network_input.0, self.network_input.1));
        }
        Ok(())
    }
}

/// Offsets of the centered crop window: `floor((src - target) / 2)`.
pub fn crop_offsets(src_w: usize, src_h: usize, target_w: usize, target_h: usize) -> (usize, usize) {
    ((src_w - target_w) / 2, (src_h - target_h) / 2)
}

/// Centered window of the given size.
pub fn center_crop(img: &ImageF32, target: (usize, usize)) -> Result<ImageF32, PreprocessError> {
    let (tw, th) = target;
    if tw > img.width || th > img.height {
        return Err(PreprocessError::TargetExceedsSource {
            target_w: tw,
            target_h: th,
            src_w: img.width,
            src_h: img.height,
        });
    }
    let (ox, oy) = crop_offsets(img.width, img.height, tw, th);
    let mut out = ImageF32::new(tw, th, img.channels);
    for c in 0..img.channels {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..th {
            let s = (oy + y) * img.width + ox;
            dst[y * tw..(y + 1) * tw].copy_from_slice(&src[s..s + tw]);
        }
    }
    Ok(out)
}

/// Center crop for masks (identical window arithmetic).
pub fn center_crop_mask(mask: &MaskU8, target: (usize, usize)) -> Result<MaskU8, PreprocessError> {
    let (tw, th) = target;
    if tw > mask.width || th > mask.height {
        return Err(PreprocessError::TargetExceedsSource {
            target_w: tw,
            target_h: th,
            src_w: mask.width,
            src_h: mask.height,
        });
    }
    let (ox, oy) = crop_offsets(mask.width, mask.height, tw, th);
    let mut out = MaskU8::new(tw, th);
    for y in 0..th {
        for x in 0..tw {
            out.set(x, y, mask.at(ox + x, oy + y));
        }
    }
    Ok(out)
}

/// Keys bicubic kernel with a = -0.5 (the classic Catmull-Rom form).
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Source coordinate of an output sample under the half-pixel convention.
fn src_coord(dst: usize, scale: f64) -> f64 {
    (dst as f64 + 0.5) * scale - 0.5
}

/// Bicubic resize (4-tap Keys kernel per axis, edge-clamped, separable).
pub fn resize_bicubic(img: &ImageF32, target: (usize, usize)) -> Result<ImageF32, PreprocessError> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(PreprocessError::NonPositiveTarget(tw, th));
    }
    if (tw, th) == (img.width, img.height) {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / tw as f64;
    let sy = img.height as f64 / th as f64;

    // Horizontal pass: img.width -> tw at original height.
    let mut mid = ImageF32::new(tw, img.height, img.channels);
    let mut xw: Vec<(isize, [f64; 4])> = Vec::with_capacity(tw);
    for ox in 0..tw {
        let sc = src_coord(ox, sx);
        let base = sc.floor() as isize;
        let frac = sc - base as f64;
        let w = [
            cubic_weight(frac + 1.0),
            cubic_weight(frac),
            cubic_weight(frac - 1.0),
            cubic_weight(frac - 2.0),
        ];
        xw.push((base - 1, w));
    }
    for c in 0..img.channels {
        let src = img.plane(c);
        let dst = mid.plane_mut(c);
        for y in 0..img.height {
            let row = &src[y * img.width..(y + 1) * img.width];
            for (ox, &(x0, w)) in xw.iter().enumerate() {
                let mut acc = 0.0f64;
                for (k, &wk) in w.iter().enumerate() {
                    let xs = (x0 + k as isize).clamp(0, img.width as isize - 1) as usize;
                    acc += wk * row[xs] as f64;
                }
                dst[y * tw + ox] = acc as f32;
            }
        }
    }

    // Vertical pass: img.height -> th.
    let mut out = ImageF32::new(tw, th, img.channels);
    let mut yw: Vec<(isize, [f64; 4])> = Vec::with_capacity(th);
    for oy in 0..th {
        let sc = src_coord(oy, sy);
        let base = sc.floor() as isize;
        let frac = sc - base as f64;
        let w = [
            cubic_weight(frac + 1.0),
            cubic_weight(frac),
            cubic_weight(frac - 1.0),
            cubic_weight(frac - 2.0),
        ];
        yw.push((base - 1, w));
    }
    for c in 0..img.channels {
        let src = mid.plane(c);
        let dst = out.plane_mut(c);
        for (oy, &(y0, w)) in yw.iter().enumerate() {
            for ox in 0..tw {
                let mut acc = 0.0f64;
                for (k, &wk) in w.iter().enumerate() {
                    let ys = (y0 + k as isize).clamp(0, img.height as isize - 1) as usize;
                    acc += wk * src[ys * tw + ox] as f64;
                }
                dst[oy * tw + ox] = acc as f32;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbor mask resize followed by re-binarization, so labels stay
/// in {0, 1}.
pub fn resize_mask_nearest(mask: &MaskU8, target: (usize, usize)) -> Result<MaskU8, PreprocessError> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(PreprocessError::NonPositiveTarget(tw, th));
    }
    let sx = mask.width as f64 / tw as f64;
    let sy = mask.height as f64 / th as f64;
    let mut out = MaskU8::new(tw, th);
    for oy in 0..th {
        let ys = (src_coord(oy, sy).round().max(0.0) as usize).min(mask.height - 1);
        for ox in 0..tw {
            let xs = (src_coord(ox, sx).round().max(0.0) as usize).min(mask.width - 1);
            out.set(ox, oy, (mask.at(xs, ys) > 0) as u8);
        }
    }
    Ok(out)
}

/// Per-image z-score standardization over all pixels and channels:
/// `(x - mean) / (std + epsilon)`. A constant image maps to all zeros.
pub fn zscore_normalize(img: &ImageF32, epsilon: f64) -> ImageF32 {
    let n = img.data().len() as f64;
    assert!(n > 0.0, "zscore on empty image");
    let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = img.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon;
    let data = img.data().iter().map(|&v| ((v as f64 - mean) / denom) as f32).collect();
    ImageF32::from_raw(img.width, img.height, img.channels, data)
}

/// Per-channel ImageNet normalization `(x - mean_c) / std_c` on the 0–255
/// scale. Requires a 3-channel RGB image.
pub fn imagenet_normalize(img: &ImageF32, spec: &NormalizationSpec) -> Result<ImageF32, PreprocessError> {
    if img.channels != 3 {
        return Err(PreprocessError::WrongChannelCount(img.channels));
    }
    let mut out = ImageF32::new(img.width, img.height, 3);
    for c in 0..3 {
        let mean = spec.imagenet_mean[c];
        let std = spec.imagenet_std[c];
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = ((s as f64 - mean) / std) as f32;
        }
    }
    Ok(out)
}

/// Result of the full pipeline on one (image, mask) pair: the image is
/// network-ready, the mask went through the same geometry.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub image: ImageF32,
    pub mask: Option<MaskU8>,
}

/// Full pipeline: center crop -> bicubic resize to the network input ->
/// ImageNet normalization (default) -> optional per-image z-score.
pub fn prepare(
    image: &ImageF32,
    mask: Option<&MaskU8>,
    cfg: &PreprocessConfig,
) -> Result<Prepared, PreprocessError> {
    cfg.validate()?;
    let cropped = center_crop(image, cfg.crop)?;
    let resized = resize_bicubic(&cropped, cfg.network_input)?;
    let mut img = resized;
    if cfg.normalization.apply_imagenet {
        img = imagenet_normalize(&img, &cfg.normalization)?;
    }
    if cfg.normalization.apply_zscore {
        img = zscore_normalize(&img, cfg.normalization.epsilon);
    }
    let mask = match mask {
        Some(m) => {
            let mc = center_crop_mask(m, cfg.crop)?;
            Some(resize_mask_nearest(&mc, cfg.network_input)?)
        }
        None => None,
    };
    Ok(Prepared { image: img, mask })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> ImageF32 {
        // pixel value encodes its column so crops are verifiable by value
        let mut img = ImageF32::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                img.plane_mut(0)[y * w + x] = x as f32;
            }
        }
        img
    }

    #[test]
    fn center_crop_574x500_to_500_selects_columns_37_to_537() {
        let img = gradient_image(574, 500);
        let out = center_crop(&img, (500, 500)).unwrap();
        assert_eq!((out.width, out.height), (500, 500));
        // Index-arithmetic oracle: offset = floor((574-500)/2) = 37.
        assert_eq!(crop_offsets(574, 500, 500, 500), (37, 0));
        for y in [0usize, 250, 499] {
            assert_eq!(out.at(0, 0, y), 37.0);
            assert_eq!(out.at(0, 499, y), 536.0);
        }
    }

    #[test]
    fn center_crop_of_exact_size_is_identity() {
        let img = gradient_image(10, 8);
        let out = center_crop(&img, (10, 8)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn center_crop_rejects_oversize_target() {
        let img = gradient_image(574, 500);
        assert_eq!(
            center_crop(&img, (600, 600)).unwrap_err(),
            PreprocessError::TargetExceedsSource { target_w: 600, target_h: 600, src_w: 574, src_h: 500 }
        );
    }

    #[test]
    fn resize_shape_contract_and_constant_preservation() {
        let mut img = ImageF32::new(500, 500, 3);
        img.data_mut().fill(42.5);
        let out = resize_bicubic(&img, (512, 512)).unwrap();
        assert_eq!((out.width, out.height, out.channels), (512, 512, 3));
        for &v in out.data() {
            assert!((v - 42.5).abs() < 1e-6, "constant not preserved: {v}");
        }
    }

    #[test]
    fn resize_rejects_zero_target() {
        let img = gradient_image(4, 4);
        assert!(matches!(resize_bicubic(&img, (0, 4)), Err(PreprocessError::NonPositiveTarget(0, 4))));
    }

    #[test]
    fn mask_resize_stays_binary() {
        let mut mask = MaskU8::new(500, 500);
        for y in 200..300 {
            for x in 150..350 {
                mask.set(x, y, 1);
            }
        }
        let out = resize_mask_nearest(&mask, (512, 512)).unwrap();
        assert_eq!((out.width, out.height), (512, 512));
        assert!(out.is_binary());
        assert!(out.foreground_count() > 0);
    }

    #[test]
    fn zscore_two_point_image() {
        let mut img = ImageF32::new(2, 1, 1);
        img.data_mut().copy_from_slice(&[0.0, 2.0]);
        let out = zscore_normalize(&img, 1e-7);
        assert!((out.data()[0] + 1.0).abs() <= 1e-5);
        assert!((out.data()[1] - 1.0).abs() <= 1e-5);
    }

    #[test]
    fn zscore_constant_image_is_all_zeros() {
        let mut img = ImageF32::new(4, 4, 3);
        img.data_mut().fill(7.0);
        let out = zscore_normalize(&img, 1e-7);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zscore_output_statistics() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f32> = (0..3 * 64 * 64).map(|_| rng.gen_range(0.0..255.0)).collect();
        let img = ImageF32::from_raw(64, 64, 3, data);
        let out = zscore_normalize(&img, 1e-7);
        let n = out.data().len() as f64;
        let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = out.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() <= 1e-6, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() <= 1e-4, "std {}", var.sqrt());
    }

    #[test]
    fn imagenet_normalize_maps_means_to_zero() {
        let spec = NormalizationSpec::default();
        let mut img = ImageF32::new(2, 2, 3);
        for c in 0..3 {
            img.plane_mut(c).fill(spec.imagenet_mean[c] as f32);
        }
        let out = imagenet_normalize(&img, &spec).unwrap();
        for &v in out.data() {
            assert!(v.abs() < 1e-5);
        }
    }

    #[test]
    fn imagenet_normalize_of_zero_image_is_minus_mean_over_std() {
        let spec = NormalizationSpec::default();
        let img = ImageF32::new(2, 2, 3);
        let out = imagenet_normalize(&img, &spec).unwrap();
        for c in 0..3 {
            let expect = (-spec.imagenet_mean[c] / spec.imagenet_std[c]) as f32;
            for &v in out.plane(c) {
                assert!((v - expect).abs() < 1e-6, "channel {c}: {v} vs {expect}");
            }
        }
    }

    #[test]
    fn imagenet_normalize_rejects_single_channel() {
        let img = ImageF32::new(2, 2, 1);
        assert_eq!(
            imagenet_normalize(&img, &NormalizationSpec::default()).unwrap_err(),
            PreprocessError::WrongChannelCount(1)
        );
    }

    #[test]
    fn crop_and_resize_keep_image_and_mask_aligned() {
        // A mask edge must land on the same pixels as the image feature it
        // marks, under identical geometry.
        let mut img = ImageF32::new(100, 80, 1);
        let mut mask = MaskU8::new(100, 80);
        for y in 20..60 {
            for x in 30..70 {
                img.plane_mut(0)[y * 100 + x] = 255.0;
                mask.set(x, y, 1);
            }
        }
        let ci = center_crop(&img, (64, 64)).unwrap();
        let cm = center_crop_mask(&mask, (64, 64)).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(ci.at(0, x, y) > 128.0, cm.at(x, y) == 1, "misaligned at {x},{y}");
            }
        }
        let ri = resize_bicubic(&ci, (32, 32)).unwrap();
        let rm = resize_mask_nearest(&cm, (32, 32)).unwrap();
        // Interior agreement (boundary pixels may differ by interpolation).
        let mut disagreements = 0;
        for y in 0..32 {
            for x in 0..32 {
                if (ri.at(0, x, y) > 128.0) != (rm.at(x, y) == 1) {
                    disagreements += 1;
                }
            }
        }
        assert!(disagreements <= 32 * 4, "geometry drifted: {disagreements} pixels");
    }

    #[test]
    fn pipeline_is_deterministic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f32> = (0..3 * 100 * 90).map(|_| rng.gen_range(0.0..255.0)).collect();
        let img = ImageF32::from_raw(100, 90, 3, data);
        let cfg = PreprocessConfig {
            crop: (90, 90),
            network_input: (64, 64),
            normalization: NormalizationSpec { apply_zscore: true, ..Default::default() },
        };
        let a = prepare(&img, None, &cfg).unwrap();
        let b = prepare(&img, None, &cfg).unwrap();
        assert_eq!(a.image.data(), b.image.data());
    }

    #[test]
    fn config_validation_requires_divisibility_by_32() {
        let cfg = PreprocessConfig { network_input: (500, 500), ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err(), PreprocessError::InputNotDivisible(500, 500));
        assert!(PreprocessConfig::default().validate().is_ok());
    }
}
