//! Stochastic training-time augmentations with mask-consistent geometry.
//!
//! Geometric ops (flips, optional rotation/zoom) transform image and mask
//! identically; photometric ops (filter, contrast, brightness) leave the
//! mask untouched. Every op is a deterministic function of its RNG state,
//! and callers derive one RNG stream per (seed, call index).

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::ImageSample;
use crate::imagebuf::{ImageF32, MaskU8, RgbU8};
use crate::preprocess::{resize_bicubic, resize_mask_nearest};

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("unknown augmentation op name: {0}")]
    UnknownOp(String),
    #[error("augmentation factor must be positive, got {0}")]
    NonPositiveFactor(f64),
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
}

/// The augmentation vocabulary. Flips, filter, contrast and brightness are
/// the default set; rotation and zoom are opt-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentOp {
    VerticalFlip,
    HorizontalFlip,
    RandomFilter,
    RandomContrast,
    RandomBrightness,
    Rotate90,
    Zoom,
}

impl AugmentOp {
    pub fn name(&self) -> &'static str {
        match self {
            AugmentOp::VerticalFlip => "vflip",
            AugmentOp::HorizontalFlip => "hflip",
            AugmentOp::RandomFilter => "filter",
            AugmentOp::RandomContrast => "contrast",
            AugmentOp::RandomBrightness => "brightness",
            AugmentOp::Rotate90 => "rotate90",
            AugmentOp::Zoom => "zoom",
        }
    }
}

impl FromStr for AugmentOp {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vflip" => Ok(AugmentOp::VerticalFlip),
            "hflip" => Ok(AugmentOp::HorizontalFlip),
            "filter" => Ok(AugmentOp::RandomFilter),
            "contrast" => Ok(AugmentOp::RandomContrast),
            "brightness" => Ok(AugmentOp::RandomBrightness),
            "rotate90" => Ok(AugmentOp::Rotate90),
            "zoom" => Ok(AugmentOp::Zoom),
            other => Err(AugmentError::UnknownOp(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyEntry {
    pub op: AugmentOp,
    pub probability: f64,
}

/// Ordered augmentation policy. `brightness_factor` / `contrast_factor`
/// bound the uniform scale draw to `[1 - f, 1 + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    pub ops: Vec<PolicyEntry>,
    pub seed: u64,
    pub brightness_factor: f64,
    pub contrast_factor: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        let ops = [
            AugmentOp::VerticalFlip,
            AugmentOp::HorizontalFlip,
            AugmentOp::RandomFilter,
            AugmentOp::RandomContrast,
            AugmentOp::RandomBrightness,
        ]
        .into_iter()
        .map(|op| PolicyEntry { op, probability: 0.5 })
        .collect();
        AugmentationPolicy { ops, seed: 0, brightness_factor: 0.5, contrast_factor: 0.5 }
    }
}

impl AugmentationPolicy {
    /// Empty policy (augmentation disabled).
    pub fn none() -> Self {
        AugmentationPolicy { ops: Vec::new(), seed: 0, brightness_factor: 0.5, contrast_factor: 0.5 }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for e in &self.ops {
            if !(0.0..=1.0).contains(&e.probability) {
                return Err(AugmentError::ProbabilityOutOfRange(e.probability));
            }
        }
        if self.brightness_factor <= 0.0 {
            return Err(AugmentError::NonPositiveFactor(self.brightness_factor));
        }
        if self.contrast_factor <= 0.0 {
            return Err(AugmentError::NonPositiveFactor(self.contrast_factor));
        }
        Ok(())
    }

    /// Independent, reproducible RNG stream for one augmentation call.
    pub fn rng_for_call(&self, call_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(call_index);
        rng
    }
}

pub fn vertical_flip(sample: &ImageSample) -> ImageSample {
    let (w, h) = (sample.image.width, sample.image.height);
    let mut image = RgbU8::new(w, h);
    let mut mask = MaskU8::new(w, h);
    for y in 0..h {
        let sy = h - 1 - y;
        for x in 0..w {
            image.set_pixel(x, y, sample.image.pixel(x, sy));
            mask.set(x, y, sample.mask.at(x, sy));
        }
    }
    ImageSample { id: sample.id.clone(), image, mask }
}

pub fn horizontal_flip(sample: &ImageSample) -> ImageSample {
    let (w, h) = (sample.image.width, sample.image.height);
    let mut image = RgbU8::new(w, h);
    let mut mask = MaskU8::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let sx = w - 1 - x;
            image.set_pixel(x, y, sample.image.pixel(sx, y));
            mask.set(x, y, sample.mask.at(sx, y));
        }
    }
    ImageSample { id: sample.id.clone(), image, mask }
}

/// Counter-clockwise rotation by `k` quarter turns (geometric: applied to
/// image and mask identically).
pub fn rotate90(sample: &ImageSample, k: u32) -> ImageSample {
    let k = k % 4;
    let (w, h) = (sample.image.width, sample.image.height);
    let (nw, nh) = if k % 2 == 1 { (h, w) } else { (w, h) };
    let mut image = RgbU8::new(nw, nh);
    let mut mask = MaskU8::new(nw, nh);
    for y in 0..nh {
        for x in 0..nw {
            let (sx, sy) = match k {
                0 => (x, y),
                1 => (nh - 1 - y, x),
                2 => (w - 1 - x, h - 1 - y),
                3 => (y, nw - 1 - x),
                _ => unreachable!(),
            };
            image.set_pixel(x, y, sample.image.pixel(sx, sy));
            mask.set(x, y, sample.mask.at(sx, sy));
        }
    }
    ImageSample { id: sample.id.clone(), image, mask }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Separable 5-tap Gaussian (sigma 1.0) with replicated edges.
fn gaussian_blur5(img: &RgbU8) -> RgbU8 {
    const OFFSETS: [isize; 5] = [-2, -1, 0, 1, 2];
    let raw = [(-2.0f64).exp(), (-0.5f64).exp(), 1.0, (-0.5f64).exp(), (-2.0f64).exp()];
    let sum: f64 = raw.iter().sum();
    let w5: Vec<f64> = raw.iter().map(|v| v / sum).collect();

    let (w, h) = (img.width, img.height);
    // Horizontal pass in f64.
    let mut mid = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (o, &wk) in OFFSETS.iter().zip(&w5) {
                    let xs = (x as isize + o).clamp(0, w as isize - 1) as usize;
                    acc += wk * img.pixel(xs, y)[c] as f64;
                }
                mid[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = RgbU8::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0u8; 3];
            for (c, b) in px.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (o, &wk) in OFFSETS.iter().zip(&w5) {
                    let ys = (y as isize + o).clamp(0, h as isize - 1) as usize;
                    acc += wk * mid[(ys * w + x) * 3 + c];
                }
                *b = clamp_u8(acc);
            }
            out.set_pixel(x, y, px);
        }
    }
    out
}

/// Unsharp mask: `x + 1.0 * (x - blur(x))`.
fn sharpen(img: &RgbU8) -> RgbU8 {
    let blurred = gaussian_blur5(img);
    let mut out = RgbU8::new(img.width, img.height);
    for (o, (s, b)) in out
        .data_mut()
        .iter_mut()
        .zip(img.data().iter().zip(blurred.data()))
    {
        *o = clamp_u8(2.0 * *s as f64 - *b as f64);
    }
    out
}

/// One of {Gaussian blur, sharpen}, chosen by the RNG. Mask untouched.
pub fn random_filter(image: &RgbU8, rng: &mut ChaCha8Rng) -> RgbU8 {
    if rng.gen_bool(0.5) {
        gaussian_blur5(image)
    } else {
        sharpen(image)
    }
}

/// Contrast rescale about the image mean: `mean + scale * (x - mean)`,
/// scale drawn uniformly from `[1 - factor, 1 + factor]`, clipped to 0–255.
pub fn random_contrast(image: &RgbU8, factor: f64, rng: &mut ChaCha8Rng) -> RgbU8 {
    assert!(factor > 0.0, "contrast factor must be positive");
    let scale = rng.gen_range(1.0 - factor..1.0 + factor);
    contrast_with_scale(image, scale)
}

pub(crate) fn contrast_with_scale(image: &RgbU8, scale: f64) -> RgbU8 {
    let n = image.data().len() as f64;
    let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let mut out = RgbU8::new(image.width, image.height);
    for (o, &s) in out.data_mut().iter_mut().zip(image.data()) {
        *o = clamp_u8(mean + scale * (s as f64 - mean));
    }
    out
}

/// Multiplicative brightness: `scale * x`, scale uniform in
/// `[1 - factor, 1 + factor]`, clipped to 0–255.
pub fn random_brightness(image: &RgbU8, factor: f64, rng: &mut ChaCha8Rng) -> RgbU8 {
    assert!(factor > 0.0, "brightness factor must be positive");
    let scale = rng.gen_range(1.0 - factor..1.0 + factor);
    brightness_with_scale(image, scale)
}

pub(crate) fn brightness_with_scale(image: &RgbU8, scale: f64) -> RgbU8 {
    let mut out = RgbU8::new(image.width, image.height);
    for (o, &s) in out.data_mut().iter_mut().zip(image.data()) {
        *o = clamp_u8(scale * s as f64);
    }
    out
}

/// Random crop-and-resize, scale drawn from [0.8, 1.0]: a window of the
/// scaled size at a random position, resized back to the original size
/// (bicubic image, nearest mask).
pub fn zoom(sample: &ImageSample, rng: &mut ChaCha8Rng) -> ImageSample {
    let (w, h) = (sample.image.width, sample.image.height);
    let scale = rng.gen_range(0.8..=1.0);
    let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
    let ox = rng.gen_range(0..=w - cw);
    let oy = rng.gen_range(0..=h - ch);

    let img_f = sample.image.to_f32();
    let mut crop = ImageF32::new(cw, ch, 3);
    for c in 0..3 {
        let src = img_f.plane(c);
        let dst = crop.plane_mut(c);
        for y in 0..ch {
            dst[y * cw..(y + 1) * cw].copy_from_slice(&src[(oy + y) * w + ox..(oy + y) * w + ox + cw]);
        }
    }
    let resized = resize_bicubic(&crop, (w, h)).expect("zoom resize");
    let mut image = RgbU8::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let px = [
                clamp_u8(resized.at(0, x, y) as f64),
                clamp_u8(resized.at(1, x, y) as f64),
                clamp_u8(resized.at(2, x, y) as f64),
            ];
            image.set_pixel(x, y, px);
        }
    }

    let mut mask_crop = MaskU8::new(cw, ch);
    for y in 0..ch {
        for x in 0..cw {
            mask_crop.set(x, y, sample.mask.at(ox + x, oy + y));
        }
    }
    let mask = resize_mask_nearest(&mask_crop, (w, h)).expect("zoom mask resize");
    ImageSample { id: sample.id.clone(), image, mask }
}

/// Apply a policy in order; each op fires independently with its configured
/// probability.
pub fn apply_policy(
    sample: &ImageSample,
    policy: &AugmentationPolicy,
    rng: &mut ChaCha8Rng,
) -> ImageSample {
    let mut out = sample.clone();
    for entry in &policy.ops {
        let fire = rng.gen_bool(entry.probability.clamp(0.0, 1.0));
        if !fire {
            continue;
        }
        match entry.op {
            AugmentOp::VerticalFlip => out = vertical_flip(&out),
            AugmentOp::HorizontalFlip => out = horizontal_flip(&out),
            AugmentOp::RandomFilter => out.image = random_filter(&out.image, rng),
            AugmentOp::RandomContrast => {
                out.image = random_contrast(&out.image, policy.contrast_factor, rng)
            }
            AugmentOp::RandomBrightness => {
                out.image = random_brightness(&out.image, policy.brightness_factor, rng)
            }
            AugmentOp::Rotate90 => {
                let k = rng.gen_range(1..=3u32);
                out = rotate90(&out, k);
            }
            AugmentOp::Zoom => out = zoom(&out, rng),
        }
    }
    out
}
