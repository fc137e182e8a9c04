//! Evaluation and reporting: per-image and aggregate Dice / Jaccard /
//! accuracy over a split, comparison tables with published reference rows,
//! and full-resolution mask export.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{load_sample, DatasetError, DatasetManifest, Split};
use crate::imagebuf::MaskU8;
use crate::metrics::{self, ConfusionCounts, MetricsError, MetricsResult};
use crate::models::{ModelError, SegmentationModel};
use crate::preprocess::{self, PreprocessConfig, PreprocessError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty {0} split")]
    EmptySplit(Split),
    #[error("unreadable input {path}: {reason}")]
    UnreadableInput { path: PathBuf, reason: String },
    #[error("unwritable output {path}: {reason}")]
    UnwritableOutput { path: PathBuf, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Anything that maps a preprocessed image to a per-pixel probability map.
/// The sample id travels along so test stubs can look up ground truth.
pub trait MaskPredictor {
    fn input_size(&self) -> (usize, usize);
    fn predict_probs(
        &mut self,
        id: &str,
        image: &polypseg_tensor::Tensor<f32>,
    ) -> Result<polypseg_tensor::Tensor<f32>, EvalError>;
}

impl MaskPredictor for SegmentationModel<f32> {
    fn input_size(&self) -> (usize, usize) {
        self.descriptor.input
    }

    fn predict_probs(
        &mut self,
        _id: &str,
        image: &polypseg_tensor::Tensor<f32>,
    ) -> Result<polypseg_tensor::Tensor<f32>, EvalError> {
        Ok(self.predict(image)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerImageMetrics {
    pub id: String,
    pub dice: f64,
    pub jaccard: f64,
    pub accuracy: f64,
}

/// Per-image and aggregate measures for one (model, split) pair. The mean
/// aggregate averages per-image ratios; the pooled aggregate recomputes the
/// ratios from summed confusion counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_name: String,
    pub per_image: Vec<PerImageMetrics>,
    pub aggregate_mean: MetricsResult,
    pub aggregate_pooled: MetricsResult,
    pub config_hash: String,
    pub n_test: usize,
}

/// Evaluate a predictor over a split: preprocess, forward, binarize, and
/// score against the identically preprocessed ground-truth mask.
pub fn evaluate(
    predictor: &mut dyn MaskPredictor,
    manifest: &DatasetManifest,
    split: Split,
    pp: &PreprocessConfig,
    threshold: f64,
    model_name: &str,
    config_hash: &str,
) -> Result<MetricsReport, EvalError> {
    let ids = manifest.ids_in_split(split);
    if ids.is_empty() {
        return Err(EvalError::EmptySplit(split));
    }
    let (w, h) = pp.network_input;
    let mut per_image = Vec::with_capacity(ids.len());
    let mut pooled = ConfusionCounts::default();
    for id in ids {
        let sample = load_sample(manifest, id)?;
        let prepared = preprocess::prepare(&sample.image.to_f32(), Some(&sample.mask), pp)?;
        let truth = prepared.mask.expect("mask requested");
        let image = polypseg_tensor::Tensor::from_vec([1, 3, h, w], prepared.image.into_vec());
        let probs = predictor.predict_probs(id, &image)?;
        let pred = metrics::binarize(&probs.data()[..w * h], w, h, threshold)?;
        let counts = metrics::confusion(&pred, &truth)?;
        let m = metrics::all_metrics(&counts)?;
        pooled.add(&counts);
        per_image.push(PerImageMetrics { id: id.to_string(), dice: m.dice, jaccard: m.jaccard, accuracy: m.accuracy });
    }
    let n = per_image.len() as f64;
    let aggregate_mean = MetricsResult {
        dice: per_image.iter().map(|m| m.dice).sum::<f64>() / n,
        jaccard: per_image.iter().map(|m| m.jaccard).sum::<f64>() / n,
        accuracy: per_image.iter().map(|m| m.accuracy).sum::<f64>() / n,
    };
    let aggregate_pooled = metrics::all_metrics(&pooled)?;
    Ok(MetricsReport {
        model_name: model_name.to_string(),
        n_test: per_image.len(),
        per_image,
        aggregate_mean,
        aggregate_pooled,
        config_hash: config_hash.to_string(),
    })
}

/// `report.csv`: one row per image plus `mean` and `pooled` footer rows.
pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut out = String::from("id,dice,jaccard,accuracy\n");
    for m in &report.per_image {
        out.push_str(&format!("{},{},{},{}\n", m.id, m.dice, m.jaccard, m.accuracy));
    }
    let am = &report.aggregate_mean;
    let ap = &report.aggregate_pooled;
    out.push_str(&format!("mean,{},{},{}\n", am.dice, am.jaccard, am.accuracy));
    out.push_str(&format!("pooled,{},{},{}\n", ap.dice, ap.jaccard, ap.accuracy));
    out
}

/// Write `<out>/<model>/report.json` and `report.csv`.
pub fn write_report_files(report: &MetricsReport, out_dir: &Path) -> Result<PathBuf, EvalError> {
    let dir = out_dir.join(&report.model_name);
    std::fs::create_dir_all(&dir)
        .map_err(|e| EvalError::UnwritableOutput { path: dir.clone(), reason: e.to_string() })?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(dir.join("report.json"), json)
        .map_err(|e| EvalError::UnwritableOutput { path: dir.join("report.json"), reason: e.to_string() })?;
    std::fs::write(dir.join("report.csv"), report_to_csv(report))
        .map_err(|e| EvalError::UnwritableOutput { path: dir.join("report.csv"), reason: e.to_string() })?;
    Ok(dir)
}

/// Published per-model results (accuracy %, Dice %, Jaccard %), available as
/// static reference rows in comparison tables.
pub const REFERENCE_RESULTS: [(&str, f64, f64, f64); 12] = [
    ("reference:baseline-unet", 97.92, 75.86, 63.53),
    ("reference:segnet", 95.12, 68.39, 61.57),
    ("reference:unet+resnet34", 98.09, 88.08, 79.22),
    ("reference:unet+resnet50", 98.77, 86.06, 77.62),
    ("reference:unet+resnet152", 98.9, 87.67, 79.22),
    ("reference:unet+densenet121", 98.72, 85.42, 77.35),
    ("reference:unet+densenet169", 99.15, 90.87, 83.82),
    ("reference:unet+densenet201", 98.85, 87.54, 80.2),
    ("reference:unet+inceptionv3", 99.08, 89.63, 81.84),
    ("reference:unet+inceptionresnetv2", 99.1, 90.42, 83.16),
    ("reference:unet+se_resnext50", 98.79, 86.61, 79.05),
    ("reference:unet+se_resnext101", 98.9, 87.63, 80.09),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub model: String,
    pub accuracy_pct: f64,
    pub dice_pct: f64,
    pub jaccard_pct: f64,
    /// Comma-free flag string, e.g. "accuracy+dice+jaccard" for a row best
    /// in all three columns; empty otherwise.
    pub best_flags: String,
    pub reference: bool,
}

/// Comparison across reports: rows sorted by model name, best measured row
/// per column flagged, percentages rendered to two decimals in the CSV.
pub fn compare(reports: &[&MetricsReport], include_reference: bool) -> Vec<CompareRow> {
    let mut rows: Vec<CompareRow> = reports
        .iter()
        .map(|r| CompareRow {
            model: r.model_name.clone(),
            accuracy_pct: r.aggregate_mean.accuracy * 100.0,
            dice_pct: r.aggregate_mean.dice * 100.0,
            jaccard_pct: r.aggregate_mean.jaccard * 100.0,
            best_flags: String::new(),
            reference: false,
        })
        .collect();
    rows.sort_by(|a, b| a.model.cmp(&b.model));

    if !rows.is_empty() {
        let best_acc = rows.iter().map(|r| r.accuracy_pct).fold(f64::MIN, f64::max);
        let best_dice = rows.iter().map(|r| r.dice_pct).fold(f64::MIN, f64::max);
        let best_jacc = rows.iter().map(|r| r.jaccard_pct).fold(f64::MIN, f64::max);
        for row in &mut rows {
            let mut flags = Vec::new();
            if row.accuracy_pct == best_acc {
                flags.push("accuracy");
            }
            if row.dice_pct == best_dice {
                flags.push("dice");
            }
            if row.jaccard_pct == best_jacc {
                flags.push("jaccard");
            }
            row.best_flags = flags.join("+");
        }
    }

    if include_reference {
        for (name, acc, dice, jacc) in REFERENCE_RESULTS {
            rows.push(CompareRow {
                model: name.to_string(),
                accuracy_pct: acc,
                dice_pct: dice,
                jaccard_pct: jacc,
                best_flags: String::new(),
                reference: true,
            });
        }
    }
    rows
}

pub fn compare_to_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("model,accuracy_pct,dice_pct,jaccard_pct,best_flags\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{}\n",
            r.model, r.accuracy_pct, r.dice_pct, r.jaccard_pct, r.best_flags
        ));
    }
    out
}

/// Predict a binary mask for one image file and write it at the original
/// resolution: network output is resized back to the crop window
/// (nearest-neighbor) and the cropped-away border is zero-padded.
pub fn predict_mask_file(
    predictor: &mut dyn MaskPredictor,
    image_path: &Path,
    output_path: &Path,
    pp: &PreprocessConfig,
    threshold: f64,
) -> Result<(), EvalError> {
    let img = image::open(image_path)
        .map_err(|e| EvalError::UnreadableInput { path: image_path.to_path_buf(), reason: e.to_string() })?
        .into_rgb8();
    let (w0, h0) = (img.width() as usize, img.height() as usize);
    let rgb = crate::imagebuf::RgbU8::from_raw(w0, h0, img.into_raw());

    let prepared = preprocess::prepare(&rgb.to_f32(), None, pp)?;
    let (nw, nh) = pp.network_input;
    let image_t = polypseg_tensor::Tensor::from_vec([1, 3, nh, nw], prepared.image.into_vec());
    let probs = predictor.predict_probs("<file>", &image_t)?;
    let pred = metrics::binarize(&probs.data()[..nw * nh], nw, nh, threshold)?;

    // Inverse geometry: un-resize to the crop window, then un-crop by
    // padding with background.
    let (cw, chh) = pp.crop;
    let at_crop = preprocess::resize_mask_nearest(&pred, (cw, chh))?;
    let (ox, oy) = preprocess::crop_offsets(w0, h0, cw, chh);
    let mut full = MaskU8::new(w0, h0);
    for y in 0..chh {
        for x in 0..cw {
            full.set(ox + x, oy + y, at_crop.at(x, y));
        }
    }

    let out_img = image::GrayImage::from_fn(w0 as u32, h0 as u32, |x, y| {
        image::Luma([full.at(x as usize, y as usize) * 255])
    });
    out_img
        .save(output_path)
        .map_err(|e| EvalError::UnwritableOutput { path: output_path.to_path_buf(), reason: e.to_string() })?;
    Ok(())
}
