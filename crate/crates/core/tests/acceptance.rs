//! Acceptance suite. Each test implements one numbered criterion at its
//! stated tolerance and runtime budget and prints a `[PASS] criterion N`
//! line on success (visible with `--nocapture`).
//!
//! Criterion 10 (full-scale reproduction on the real dataset with
//! pretrained weights) needs external data and hardware; it is `#[ignore]`d
//! and runs with `cargo test -p polypseg --test acceptance -- --ignored`.

use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use polypseg::augment::{
    apply_policy, horizontal_flip, random_brightness, random_contrast, random_filter,
    vertical_flip, AugmentOp, AugmentationPolicy, PolicyEntry,
};
use polypseg::dataset::{self, ManifestEntry, Split};
use polypseg::imagebuf::{ImageF32, MaskU8, RgbU8};
use polypseg::metrics::{self, ConfusionCounts};
use polypseg::models::{self, build_model_with, ModelOptions, SegmentationModel};
use polypseg::preprocess::{self, NormalizationSpec, PreprocessConfig};
use polypseg::report::{self, EvalError, MaskPredictor};
use polypseg::trainer::{self, graph_loss, LossKind, TrainConfig};
use polypseg_tensor::{Graph, InitRng, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The timing-sensitive criteria must not share the two available cores, so
/// every test serializes on this gate.
static GATE: Mutex<()> = Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn passed(n: &str, what: &str) {
    println!("[PASS] criterion {n}: {what}");
}

fn random_mask_pair(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (MaskU8, MaskU8) {
    let a = MaskU8::from_raw(w, h, (0..w * h).map(|_| rng.gen_range(0..=1u8)).collect());
    let b = MaskU8::from_raw(w, h, (0..w * h).map(|_| rng.gen_range(0..=1u8)).collect());
    (a, b)
}

/// Brute-force per-pixel enumeration, kept independent of the metrics
/// implementation: plain counters and the textbook set formulas.
fn enumeration_oracle(pred: &MaskU8, truth: &MaskU8) -> (ConfusionCounts, f64, f64, f64) {
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for y in 0..pred.height {
        for x in 0..pred.width {
            match (pred.at(x, y), truth.at(x, y)) {
                (1, 1) => tp += 1,
                (0, 0) => tn += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => panic!("non-binary mask"),
            }
        }
    }
    let inter = tp as f64;
    let a = (tp + fp) as f64;
    let b = (tp + fn_) as f64;
    let union = a + b - inter;
    let jaccard = if union == 0.0 { 1.0 } else { inter / union };
    let dice = if a + b == 0.0 { 1.0 } else { 2.0 * inter / (a + b) };
    let accuracy = (tp + tn) as f64 / (tp + tn + fp + fn_) as f64;
    (ConfusionCounts { tp, tn, fp, fn_ }, jaccard, dice, accuracy)
}

#[test]
fn criterion_1_metrics_oracle_equivalence() {
    let _g = gate();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20240521);
    for _ in 0..1000 {
        let (pred, truth) = random_mask_pair(&mut rng, 16, 16);
        let counts = metrics::confusion(&pred, &truth).unwrap();
        let (oc, oj, od, oacc) = enumeration_oracle(&pred, &truth);
        assert_eq!(counts, oc, "confusion counts must match enumeration exactly");
        let j = metrics::jaccard(&counts);
        let d = metrics::dice(&counts);
        let acc = metrics::accuracy(&counts).unwrap();
        assert!((j - oj).abs() <= 1e-12);
        assert!((d - od).abs() <= 1e-12);
        assert!((acc - oacc).abs() <= 1e-12);
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 5.0, "criterion 1 runtime {secs:.2}s exceeds 5s");
    passed("1", "dice/jaccard/accuracy equal brute-force enumeration on 1000 random 16x16 pairs");
}

#[test]
fn criterion_2_dice_jaccard_relation() {
    let _g = gate();
    let mut rng = ChaCha8Rng::seed_from_u64(20240521);
    for _ in 0..1000 {
        let (pred, truth) = random_mask_pair(&mut rng, 16, 16);
        let counts = metrics::confusion(&pred, &truth).unwrap();
        let j = metrics::jaccard(&counts);
        let d = metrics::dice(&counts);
        assert!(
            (d - 2.0 * j / (1.0 + j)).abs() <= 1e-12,
            "dice {d} vs 2j/(1+j) for j={j}"
        );
    }
    passed("2", "dice = 2j/(1+j) to 1e-12 on 1000 random pairs");
}

#[test]
fn criterion_3_preprocessing_exactness() {
    let _g = gate();
    let t0 = Instant::now();

    // Synthetic gradient: pixel value encodes its source column.
    let mut img = ImageF32::new(574, 500, 1);
    for y in 0..500 {
        for x in 0..574 {
            img.plane_mut(0)[y * 574 + x] = x as f32;
        }
    }
    let cropped = preprocess::center_crop(&img, (500, 500)).unwrap();
    // Index-arithmetic oracle: offset floor((574-500)/2) = 37, columns [37, 537).
    assert_eq!(preprocess::crop_offsets(574, 500, 500, 500), (37, 0));
    for y in 0..500 {
        for x in 0..500 {
            assert_eq!(cropped.at(0, x, y), (37 + x) as f32, "crop window must be bit-exact");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let data: Vec<f32> = (0..3 * 48 * 48).map(|_| rng.gen_range(0.0..255.0)).collect();
        let image = ImageF32::from_raw(48, 48, 3, data);
        let out = preprocess::zscore_normalize(&image, 1e-7);
        let n = out.data().len() as f64;
        let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = out.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() <= 1e-6, "z-score mean {mean}");
        assert!((var.sqrt() - 1.0).abs() <= 1e-4, "z-score std {}", var.sqrt());
    }

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 5.0, "criterion 3 runtime {secs:.2}s exceeds 5s");
    passed("3", "center crop selects columns [37,537) bit-exactly; z-score stats within tolerance");
}

#[test]
fn criterion_4_augmentation_properties() {
    let _g = gate();
    let t0 = Instant::now();
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let (w, h) = (24, 20);
        let mut image = RgbU8::new(w, h);
        for b in image.data_mut() {
            *b = rng.gen();
        }
        let mut mask = MaskU8::new(w, h);
        for m in mask.data_mut() {
            *m = rng.gen_range(0..=1);
        }
        let sample = dataset::ImageSample { id: format!("t{trial}"), image, mask };

        // Flips: involutions, bit-exact, pixel multiset preserved.
        let v2 = vertical_flip(&vertical_flip(&sample));
        assert_eq!(v2.image, sample.image);
        assert_eq!(v2.mask, sample.mask);
        let h2 = horizontal_flip(&horizontal_flip(&sample));
        assert_eq!(h2.image, sample.image);
        assert_eq!(h2.mask, sample.mask);
        let mut a = sample.image.data().to_vec();
        let mut b = vertical_flip(&sample).image.data().to_vec();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b, "flip must permute, not alter, pixel values");

        // Photometric ops leave the mask bit-identical.
        let policy = AugmentationPolicy {
            ops: vec![
                PolicyEntry { op: AugmentOp::RandomFilter, probability: 1.0 },
                PolicyEntry { op: AugmentOp::RandomContrast, probability: 1.0 },
                PolicyEntry { op: AugmentOp::RandomBrightness, probability: 1.0 },
            ],
            seed: trial,
            ..Default::default()
        };
        let photo = apply_policy(&sample, &policy, &mut policy.rng_for_call(0));
        assert_eq!(photo.mask, sample.mask, "photometric op touched the mask");

        // Fixed seed => bit-identical outputs across two runs, per op and
        // through the full policy.
        let full = AugmentationPolicy { seed: trial, ..Default::default() };
        let run1 = apply_policy(&sample, &full, &mut full.rng_for_call(3));
        let run2 = apply_policy(&sample, &full, &mut full.rng_for_call(3));
        assert_eq!(run1.image, run2.image);
        assert_eq!(run1.mask, run2.mask);
        let f1 = random_filter(&sample.image, &mut ChaCha8Rng::seed_from_u64(trial));
        let f2 = random_filter(&sample.image, &mut ChaCha8Rng::seed_from_u64(trial));
        assert_eq!(f1, f2);
        let c1 = random_contrast(&sample.image, 0.5, &mut ChaCha8Rng::seed_from_u64(trial));
        let c2 = random_contrast(&sample.image, 0.5, &mut ChaCha8Rng::seed_from_u64(trial));
        assert_eq!(c1, c2);
        let b1 = random_brightness(&sample.image, 0.5, &mut ChaCha8Rng::seed_from_u64(trial));
        let b2 = random_brightness(&sample.image, 0.5, &mut ChaCha8Rng::seed_from_u64(trial));
        assert_eq!(b1, b2);
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 10.0, "criterion 4 runtime {secs:.2}s exceeds 10s");
    passed("4", "flip involutions, photometric mask invariance and seeded determinism over 100 trials");
}

fn all_model_names() -> Vec<String> {
    let mut names: Vec<String> = models::list_encoders().iter().map(|s| s.name.to_string()).collect();
    names.push(models::UNET_BASELINE.to_string());
    names.push(models::SEGNET_BASELINE.to_string());
    names
}

#[test]
fn criterion_5_model_shape_and_range_suite() {
    let _g = gate();
    let t0 = Instant::now();
    let mut rng = InitRng::new(0);
    let batch: Tensor<f32> = rng.uniform([2, 3, 512, 512], -2.0, 2.0);
    for name in all_model_names() {
        let mut model: SegmentationModel<f32> =
            build_model_with(&name, (512, 512), false, 1, &ModelOptions::default()).unwrap();
        let out = model.predict(&batch).unwrap();
        assert_eq!(out.shape(), [2, 1, 512, 512], "{name}: wrong output shape");
        assert!(
            out.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
            "{name}: output outside [0, 1]"
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 300.0, "criterion 5 runtime {secs:.1}s exceeds 5 minutes");
    passed("5", "all 13 models map 2x3x512x512 to 2x1x512x512 within [0,1]");
}

/// Parameter-name prefixes that must receive nonzero gradients: one per
/// encoder tap path plus every decoder stage.
fn required_gradient_prefixes(name: &str) -> Vec<String> {
    let mut p: Vec<String> = match name {
        "resnet34" | "resnet50" | "resnet152" | "se_resnext50" | "se_resnext101" => {
            vec!["encoder.stem", "encoder.layer1.", "encoder.layer2.", "encoder.layer3.", "encoder.layer4."]
        }
        "densenet121" | "densenet169" | "densenet201" => {
            vec!["encoder.stem", "encoder.block1.", "encoder.block2.", "encoder.block3.", "encoder.block4."]
        }
        "inceptionv3" => {
            vec!["encoder.stem1", "encoder.stem5", "encoder.mixed_a", "encoder.mixed_b", "encoder.mixed_c"]
        }
        "inceptionresnetv2" => {
            vec!["encoder.stem1", "encoder.stem5", "encoder.block35_", "encoder.block17_", "encoder.conv_7b"]
        }
        "vgg16" => {
            vec!["encoder.stage1.", "encoder.stage2.", "encoder.stage3.", "encoder.stage4.", "encoder.stage5."]
        }
        "unet_baseline" => vec![
            "unet.enc0.", "unet.enc1.", "unet.enc2.", "unet.enc3.", "unet.bottleneck.", "unet.dec0.",
            "unet.dec1.", "unet.dec2.", "unet.dec3.", "unet.head",
        ],
        "segnet_baseline" => vec![
            "segnet.enc1.", "segnet.enc2.", "segnet.enc3.", "segnet.enc4.", "segnet.enc5.",
            "segnet.dec1.", "segnet.dec2.", "segnet.dec3.", "segnet.dec4.", "segnet.dec5.",
            "segnet.head",
        ],
        other => panic!("no prefix table for {other}"),
    }
    .into_iter()
    .map(String::from)
    .collect();
    if models::encoder_spec(name).is_some() {
        for stage in 0..5 {
            p.push(format!("decoder.stage{stage}."));
        }
        p.push("decoder.head".to_string());
    }
    p
}

#[test]
fn criterion_6a_gradient_flow_reaches_every_stage() {
    let _g = gate();
    let mut rng = InitRng::new(4);
    let batch: Tensor<f32> = rng.uniform([1, 3, 64, 64], -1.0, 1.0);
    let mut trng = ChaCha8Rng::seed_from_u64(9);
    let target = Tensor::from_vec(
        [1, 1, 64, 64],
        (0..64 * 64).map(|_| trng.gen_range(0..=1) as f32).collect(),
    );
    for name in all_model_names() {
        let mut model: SegmentationModel<f32> =
            build_model_with(&name, (64, 64), false, 2, &ModelOptions::default()).unwrap();
        let mut g = Graph::train();
        let probs = model.forward(&mut g, &batch).unwrap();
        let loss = graph_loss(&mut g, &probs, &target, LossKind::BcePlusDice);
        let grads = g.backward(&loss, model.store());

        for prefix in required_gradient_prefixes(&name) {
            let mut any_nonzero = false;
            let mut any_param = false;
            for (id, pname, _) in model.store().iter_params() {
                if !pname.starts_with(&prefix) {
                    continue;
                }
                any_param = true;
                if let Some(gt) = grads.get(id) {
                    if gt.data().iter().any(|&v| v != 0.0) {
                        any_nonzero = true;
                        break;
                    }
                }
            }
            assert!(any_param, "{name}: prefix {prefix} matches no parameters");
            assert!(any_nonzero, "{name}: no gradient reaches {prefix}");
        }
    }
    passed("6a", "nonzero gradients reach every encoder tap path and decoder stage for all 13 models");
}

#[test]
fn criterion_6b_finite_difference_gradient_check() {
    let _g = gate();
    // Tiny baseline U-Net in f64: base 2, depth 3 stays under 10k params.
    let options = ModelOptions { base_channels: 2, depth: 3, ..Default::default() };
    let mut model: SegmentationModel<f64> =
        build_model_with(models::UNET_BASELINE, (32, 32), false, 5, &options).unwrap();
    assert!(
        model.num_parameters() <= 10_000,
        "fd-check model has {} parameters (> 10k)",
        model.num_parameters()
    );

    let mut rng = InitRng::new(11);
    let batch: Tensor<f64> = rng.uniform([1, 3, 32, 32], -1.0, 1.0);
    let mut trng = ChaCha8Rng::seed_from_u64(3);
    let target = Tensor::from_vec(
        [1, 1, 32, 32],
        (0..32 * 32).map(|_| trng.gen_range(0..=1) as f64).collect(),
    );

    let loss_of = |model: &mut SegmentationModel<f64>| -> f64 {
        let mut g = Graph::train();
        let probs = model.forward(&mut g, &batch).unwrap();
        let loss = graph_loss(&mut g, &probs, &target, LossKind::BcePlusDice);
        g.scalar(&loss)
    };

    let mut g = Graph::train();
    let probs = model.forward(&mut g, &batch).unwrap();
    let loss = graph_loss(&mut g, &probs, &target, LossKind::BcePlusDice);
    let grads = g.backward(&loss, model.store());

    // 20 parameters sampled uniformly across the whole parameter vector.
    let park: Vec<(polypseg_tensor::ParamId, String, usize)> = model
        .store()
        .iter_params()
        .map(|(id, name, t)| (id, name.to_string(), t.numel()))
        .collect();
    let total: usize = park.iter().map(|(_, _, n)| n).sum();
    let mut srng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-5;
    for _ in 0..20 {
        let mut flat = srng.gen_range(0..total);
        let (id, name, idx) = park
            .iter()
            .find_map(|(id, name, n)| {
                if flat < *n {
                    Some((*id, name.clone(), flat))
                } else {
                    flat -= n;
                    None
                }
            })
            .unwrap();

        let orig = model.store().param(id).clone();
        let mut plus = orig.clone();
        plus.data_mut()[idx] += h;
        model.store_mut().set_param(id, plus);
        let lp = loss_of(&mut model);
        let mut minus = orig.clone();
        minus.data_mut()[idx] -= h;
        model.store_mut().set_param(id, minus);
        let lm = loss_of(&mut model);
        model.store_mut().set_param(id, orig);

        let fd = (lp - lm) / (2.0 * h);
        let analytic = grads.get(id).expect("gradient present").data()[idx];
        let denom = analytic.abs().max(fd.abs());
        if denom < 1e-10 {
            continue; // both zero: agreement
        }
        let rel = (analytic - fd).abs() / denom;
        assert!(rel <= 1e-2, "{name}[{idx}] rel err {rel:.2e} (analytic {analytic:.6e}, fd {fd:.6e})");
    }
    passed("6b", "analytic gradients match central differences within 1e-2 on 20 sampled parameters");
}

/// Synthetic colonoscopy-like frame: dark vignetted background with a
/// bright elliptical blob, plus its mask.
fn synthetic_pair(seed: u64, w: u32, h: u32) -> (image::RgbImage, image::GrayImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cx = rng.gen_range(w as f64 * 0.3..w as f64 * 0.7);
    let cy = rng.gen_range(h as f64 * 0.3..h as f64 * 0.7);
    let rx = rng.gen_range(w as f64 * 0.12..w as f64 * 0.25);
    let ry = rng.gen_range(h as f64 * 0.12..h as f64 * 0.25);
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        let d = ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2);
        if d <= 1.0 {
            image::Rgb([190, 120, 110])
        } else {
            let base = 40 + ((x as u64 * 7 + y as u64 * 13) % 30) as u8;
            image::Rgb([base, base / 2 + 20, base / 2 + 25])
        }
    });
    let mask = image::GrayImage::from_fn(w, h, |x, y| {
        let d = ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2);
        image::Luma([if d <= 1.0 { 255 } else { 0 }])
    });
    (img, mask)
}

fn write_synthetic_dataset(root: &Path, n: usize, w: u32, h: u32) {
    std::fs::create_dir_all(root.join("images")).unwrap();
    std::fs::create_dir_all(root.join("masks")).unwrap();
    for i in 0..n {
        let (img, mask) = synthetic_pair(1000 + i as u64, w, h);
        img.save(root.join("images").join(format!("{i:03}.png"))).unwrap();
        mask.save(root.join("masks").join(format!("{i:03}.png"))).unwrap();
    }
}

#[test]
fn criterion_7_overfit_sanity_training() {
    let _g = gate();
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    // Three pairs: two train, one val (checkpoint selection needs one).
    write_synthetic_dataset(dir.path(), 3, 160, 140);
    let scanned = dataset::scan_dataset(dir.path()).unwrap();
    let mut manifest = scanned.clone();
    manifest.entries[0].split = Some(Split::Train);
    manifest.entries[1].split = Some(Split::Train);
    manifest.entries[2].split = Some(Split::Val);

    let pp = PreprocessConfig {
        crop: (140, 140),
        network_input: (128, 128),
        normalization: NormalizationSpec::default(),
    };
    // 2 train images, batch 1 => 2 steps/epoch; 100 epochs = 200 steps.
    let cfg = TrainConfig {
        learning_rate: 1e-4,
        batch_size: 1,
        epochs: 100,
        loss: LossKind::BcePlusDice,
        seed: 3,
        augmentation: AugmentationPolicy::none(),
        preprocess: pp.clone(),
        checkpoint_dir: dir.path().join("ckpt"),
        threshold: 0.5,
        ..Default::default()
    };
    let mut model: SegmentationModel<f32> =
        models::build_model(models::UNET_BASELINE, (128, 128), false, 1).unwrap();
    let (_best, history) = trainer::train(&mut model, &manifest, &cfg).unwrap();
    assert_eq!(history.records.len(), 100);

    let train_report = report::evaluate(&mut model, &manifest, Split::Train, &pp, 0.5, "overfit", "").unwrap();
    let dice = train_report.aggregate_mean.dice;
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 600.0, "criterion 7 runtime {secs:.0}s exceeds 10 minutes");
    assert!(dice >= 0.95, "training-set Dice {dice:.4} below 0.95 after 200 steps");
    passed("7", &format!("unet_baseline memorized 2 images to Dice {dice:.4} in 200 steps ({secs:.0}s)"));
}

/// Stub that returns the preprocessed ground-truth mask as its probability
/// map; end-to-end identity check of the evaluation pipeline.
struct TruthStub<'a> {
    manifest: &'a dataset::DatasetManifest,
    pp: PreprocessConfig,
}

impl MaskPredictor for TruthStub<'_> {
    fn input_size(&self) -> (usize, usize) {
        self.pp.network_input
    }

    fn predict_probs(&mut self, id: &str, _image: &Tensor<f32>) -> Result<Tensor<f32>, EvalError> {
        let sample = dataset::load_sample(self.manifest, id)?;
        let prepared = preprocess::prepare(&sample.image.to_f32(), Some(&sample.mask), &self.pp)?;
        let mask = prepared.mask.unwrap();
        let (w, h) = self.pp.network_input;
        Ok(Tensor::from_vec([1, 1, h, w], mask.data().iter().map(|&v| v as f32).collect()))
    }
}

#[test]
fn criterion_8_end_to_end_identity_with_truth_stub() {
    let _g = gate();
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_dataset(dir.path(), 10, 72, 64);
    let mut manifest = dataset::scan_dataset(dir.path()).unwrap();
    for e in &mut manifest.entries {
        e.split = Some(Split::Test);
    }
    let pp = PreprocessConfig {
        crop: (64, 64),
        network_input: (32, 32),
        normalization: NormalizationSpec::default(),
    };
    let mut stub = TruthStub { manifest: &manifest, pp: pp.clone() };
    let report = report::evaluate(&mut stub, &manifest, Split::Test, &pp, 0.5, "truth-stub", "").unwrap();
    assert_eq!(report.n_test, 10);
    assert_eq!(report.aggregate_mean.dice, 1.0);
    assert_eq!(report.aggregate_mean.jaccard, 1.0);
    assert_eq!(report.aggregate_mean.accuracy, 1.0);
    assert_eq!(report.aggregate_pooled.dice, 1.0);
    assert_eq!(report.aggregate_pooled.jaccard, 1.0);
    assert_eq!(report.aggregate_pooled.accuracy, 1.0);
    passed("8", "ground-truth stub yields dice = jaccard = accuracy = 1.0 over a 10-image dataset");
}

#[test]
fn criterion_9_split_protocol_determinism() {
    let _g = gate();
    let entries: Vec<ManifestEntry> = (0..300)
        .map(|i| ManifestEntry {
            id: format!("{i:03}"),
            image_path: format!("images/{i:03}.png").into(),
            mask_path: format!("masks/{i:03}.png").into(),
            split: None,
        })
        .collect();
    let manifest = dataset::DatasetManifest {
        entries,
        seed: None,
        test_fraction: None,
        val_fraction_of_trainval: None,
        source_resolution: Some((574, 500)),
    };
    let a = dataset::split_manifest(&manifest, 0.2, 0.1, 42).unwrap();
    let b = dataset::split_manifest(&manifest, 0.2, 0.1, 42).unwrap();
    assert_eq!(a.ids_in_split(Split::Test).len(), 60);
    assert_eq!(
        a.ids_in_split(Split::Train).len() + a.ids_in_split(Split::Val).len(),
        240
    );
    use std::collections::HashSet;
    let train: HashSet<_> = a.ids_in_split(Split::Train).into_iter().collect();
    let val: HashSet<_> = a.ids_in_split(Split::Val).into_iter().collect();
    let test: HashSet<_> = a.ids_in_split(Split::Test).into_iter().collect();
    assert!(train.is_disjoint(&val) && train.is_disjoint(&test) && val.is_disjoint(&test));
    assert_eq!(train.len() + val.len() + test.len(), 300);
    assert_eq!(
        dataset::manifest_to_string(&a),
        dataset::manifest_to_string(&b),
        "same seed must regenerate a byte-identical manifest"
    );
    passed("9", "300 entries split 60/240, disjoint, byte-identical across runs");
}

/// Full-scale reproduction on the real dataset with pretrained weights.
/// Requires `POLYPSEG_CVC_ROOT` (directory with `images/` and `masks/`) and
/// `POLYPSEG_PRETRAINED_DIR` (a `densenet169.pst` container), plus several
/// GPU-hours' worth of compute if run on CPU.
#[test]
#[ignore]
fn criterion_10_extended_full_scale_reproduction() {
    let root = std::env::var_os("POLYPSEG_CVC_ROOT")
        .map(std::path::PathBuf::from)
        .expect("set POLYPSEG_CVC_ROOT to the CVC-ClinicDB directory (images/ + masks/)");
    let manifest = dataset::scan_dataset(&root).unwrap();
    let manifest = dataset::split_manifest(&manifest, 0.2, 0.1, 42).unwrap();

    let pp = PreprocessConfig::default(); // 500x500 crop, 512x512 input
    let cfg = TrainConfig {
        learning_rate: 1e-5,
        beta1: 0.9,
        beta2: 0.999,
        batch_size: 2,
        epochs: 50,
        loss: LossKind::BcePlusDice,
        seed: 42,
        augmentation: AugmentationPolicy::default(),
        preprocess: pp.clone(),
        checkpoint_dir: std::env::temp_dir().join("polypseg-full-run"),
        threshold: 0.5,
        ..Default::default()
    };
    let mut model: SegmentationModel<f32> = models::build_model_with(
        "densenet169",
        (512, 512),
        true, // pretrained weights are required for this criterion
        42,
        &ModelOptions::default(),
    )
    .expect("pretrained densenet169 weights must be available (POLYPSEG_PRETRAINED_DIR)");
    let (best, _history) = trainer::train(&mut model, &manifest, &cfg).unwrap();

    let (mut best_model, _, _) = models::load_checkpoint(&best.path).unwrap();
    let report =
        report::evaluate(&mut best_model, &manifest, Split::Test, &pp, 0.5, "densenet169", "").unwrap();
    let dice = report.aggregate_mean.dice * 100.0;
    let jaccard = report.aggregate_mean.jaccard * 100.0;
    assert!(
        (dice - 90.87).abs() <= 3.0,
        "test Dice {dice:.2}% outside 90.87 +/- 3.0 (loss-function ablation indicated)"
    );
    assert!(
        (jaccard - 83.82).abs() <= 3.5,
        "test Jaccard {jaccard:.2}% outside 83.82 +/- 3.5 (loss-function ablation indicated)"
    );
    passed("10", "full-scale densenet169 run within the published tolerance band");
}
