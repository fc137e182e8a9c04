//! Flat key-value experiment configuration (`section.key = value` lines,
//! `#` comments). Every knob of the toolkit hangs off one file; a canonical
//! serialization (sorted keys, normalized whitespace) defines the config
//! hash stamped into manifests, checkpoints and reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augment::{AugmentOp, AugmentationPolicy, PolicyEntry};
use crate::preprocess::{NormalizationSpec, PreprocessConfig};
use crate::trainer::{LossKind, TrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("missing required config key `{0}`")]
    MissingKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config line {line} is not `key = value`: {text}")]
    MalformedLine { line: usize, text: String },
    #[error("cannot read config {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
}

/// Everything an experiment needs: dataset location, split recipe,
/// preprocessing, augmentation, model choice, training recipe, output paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset_root: Option<PathBuf>,
    pub manifest_path: PathBuf,
    pub split_seed: u64,
    pub test_fraction: f64,
    pub val_fraction_of_trainval: f64,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentationPolicy,
    pub encoder: String,
    pub pretrained: bool,
    pub pretrained_dir: Option<PathBuf>,
    pub model_seed: u64,
    pub decoder_channels: [usize; 5],
    pub base_channels: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: u32,
    pub loss: LossKind,
    pub train_seed: u64,
    pub grad_clip: Option<f64>,
    pub threshold: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_root: None,
            manifest_path: PathBuf::from("manifest.csv"),
            split_seed: 42,
            test_fraction: 0.2,
            val_fraction_of_trainval: 0.1,
            preprocess: PreprocessConfig::default(),
            augment: AugmentationPolicy::default(),
            encoder: "densenet169".to_string(),
            pretrained: false,
            pretrained_dir: None,
            model_seed: 7,
            decoder_channels: crate::models::DEFAULT_DECODER_CHANNELS,
            base_channels: 64,
            depth: 4,
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 2,
            epochs: 50,
            loss: LossKind::BcePlusDice,
            train_seed: 7,
            grad_clip: None,
            threshold: 0.5,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn size_to_string(s: (usize, usize)) -> String {
    format!("{}x{}", s.0, s.1)
}

fn parse_size(key: &str, v: &str) -> Result<(usize, usize), ConfigError> {
    let (w, h) = v.split_once('x').ok_or_else(|| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: format!("expected WIDTHxHEIGHT, got `{v}`"),
    })?;
    let parse = |s: &str| {
        s.trim().parse::<usize>().map_err(|e| ConfigError::InvalidValue {
            key: key.to_string(),
            reason: format!("bad dimension `{s}`: {e}"),
        })
    };
    Ok((parse(w)?, parse(h)?))
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: format!("`{v}`: {e}"),
    })
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(ConfigError::InvalidValue {
            key: key.to_string(),
            reason: format!("expected true/false, got `{other}`"),
        }),
    }
}

fn parse_list3(key: &str, v: &str) -> Result<[f64; 3], ConfigError> {
    let parts: Vec<f64> = v
        .split(',')
        .map(|s| parse_num::<f64>(key, s))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: "expected exactly 3 comma-separated numbers".to_string(),
    })
}

fn parse_ops(key: &str, v: &str) -> Result<Vec<PolicyEntry>, ConfigError> {
    if v.trim().is_empty() || v.trim() == "none" {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let item = item.trim();
            let (name, prob) = item.split_once(':').unwrap_or((item, "0.5"));
            let op = AugmentOp::from_str(name.trim()).map_err(|e| ConfigError::InvalidValue {
                key: key.to_string(),
                reason: e.to_string(),
            })?;
            let probability = parse_num::<f64>(key, prob)?;
            if !(0.0..=1.0).contains(&probability) {
                return Err(ConfigError::InvalidValue {
                    key: key.to_string(),
                    reason: format!("probability {probability} outside [0, 1]"),
                });
            }
            Ok(PolicyEntry { op, probability })
        })
        .collect()
}

fn ops_to_string(ops: &[PolicyEntry]) -> String {
    if ops.is_empty() {
        return "none".to_string();
    }
    ops.iter().map(|e| format!("{}:{}", e.op.name(), e.probability)).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Canonical key/value form: sorted keys, one `key = value` per line.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        if let Some(root) = &self.dataset_root {
            m.insert("dataset.root".into(), root.to_string_lossy().into_owned());
        }
        m.insert("dataset.manifest".into(), self.manifest_path.to_string_lossy().into_owned());
        m.insert("split.seed".into(), self.split_seed.to_string());
        m.insert("split.test_fraction".into(), self.test_fraction.to_string());
        m.insert("split.val_fraction_of_trainval".into(), self.val_fraction_of_trainval.to_string());
        m.insert("preprocess.crop".into(), size_to_string(self.preprocess.crop));
        m.insert("preprocess.network_input".into(), size_to_string(self.preprocess.network_input));
        m.insert("preprocess.imagenet".into(), self.preprocess.normalization.apply_imagenet.to_string());
        m.insert("preprocess.zscore".into(), self.preprocess.normalization.apply_zscore.to_string());
        m.insert(
            "preprocess.imagenet_mean".into(),
            self.preprocess.normalization.imagenet_mean.map(|v| v.to_string()).join(","),
        );
        m.insert(
            "preprocess.imagenet_std".into(),
            self.preprocess.normalization.imagenet_std.map(|v| v.to_string()).join(","),
        );
        m.insert("preprocess.epsilon".into(), self.preprocess.normalization.epsilon.to_string());
        m.insert("augment.ops".into(), ops_to_string(&self.augment.ops));
        m.insert("augment.seed".into(), self.augment.seed.to_string());
        m.insert("augment.brightness_factor".into(), self.augment.brightness_factor.to_string());
        m.insert("augment.contrast_factor".into(), self.augment.contrast_factor.to_string());
        m.insert("model.encoder".into(), self.encoder.clone());
        m.insert("model.pretrained".into(), self.pretrained.to_string());
        if let Some(dir) = &self.pretrained_dir {
            m.insert("model.pretrained_dir".into(), dir.to_string_lossy().into_owned());
        }
        m.insert("model.seed".into(), self.model_seed.to_string());
        m.insert(
            "model.decoder_channels".into(),
            self.decoder_channels.map(|c| c.to_string()).join(","),
        );
        m.insert("model.base_channels".into(), self.base_channels.to_string());
        m.insert("model.depth".into(), self.depth.to_string());
        m.insert("train.learning_rate".into(), self.learning_rate.to_string());
        m.insert("train.beta1".into(), self.beta1.to_string());
        m.insert("train.beta2".into(), self.beta2.to_string());
        m.insert("train.batch_size".into(), self.batch_size.to_string());
        m.insert("train.epochs".into(), self.epochs.to_string());
        m.insert("train.loss".into(), self.loss.as_str().to_string());
        m.insert("train.seed".into(), self.train_seed.to_string());
        if let Some(c) = self.grad_clip {
            m.insert("train.grad_clip".into(), c.to_string());
        }
        m.insert("eval.threshold".into(), self.threshold.to_string());
        m.insert("output.dir".into(), self.output_dir.to_string_lossy().into_owned());
        m
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// SHA-256 over the canonical form, hex-encoded (first 16 bytes).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_config_string().as_bytes());
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::MalformedLine {
                line: lineno + 1,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "dataset.root" => self.dataset_root = Some(PathBuf::from(value)),
            "dataset.manifest" => self.manifest_path = PathBuf::from(value),
            "split.seed" => self.split_seed = parse_num(key, value)?,
            "split.test_fraction" => self.test_fraction = parse_num(key, value)?,
            "split.val_fraction_of_trainval" => self.val_fraction_of_trainval = parse_num(key, value)?,
            "preprocess.crop" => self.preprocess.crop = parse_size(key, value)?,
            "preprocess.network_input" => self.preprocess.network_input = parse_size(key, value)?,
            "preprocess.imagenet" => self.preprocess.normalization.apply_imagenet = parse_bool(key, value)?,
            "preprocess.zscore" => self.preprocess.normalization.apply_zscore = parse_bool(key, value)?,
            "preprocess.imagenet_mean" => self.preprocess.normalization.imagenet_mean = parse_list3(key, value)?,
            "preprocess.imagenet_std" => self.preprocess.normalization.imagenet_std = parse_list3(key, value)?,
            "preprocess.epsilon" => self.preprocess.normalization.epsilon = parse_num(key, value)?,
            "augment.ops" => self.augment.ops = parse_ops(key, value)?,
            "augment.seed" => self.augment.seed = parse_num(key, value)?,
            "augment.brightness_factor" => self.augment.brightness_factor = parse_num(key, value)?,
            "augment.contrast_factor" => self.augment.contrast_factor = parse_num(key, value)?,
            "model.encoder" => self.encoder = value.to_string(),
            "model.pretrained" => self.pretrained = parse_bool(key, value)?,
            "model.pretrained_dir" => self.pretrained_dir = Some(PathBuf::from(value)),
            "model.seed" => self.model_seed = parse_num(key, value)?,
            "model.decoder_channels" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|s| parse_num::<usize>(key, s))
                    .collect::<Result<_, _>>()?;
                self.decoder_channels = parts.try_into().map_err(|_| ConfigError::InvalidValue {
                    key: key.to_string(),
                    reason: "expected exactly 5 channel widths".to_string(),
                })?;
            }
            "model.base_channels" => self.base_channels = parse_num(key, value)?,
            "model.depth" => self.depth = parse_num(key, value)?,
            "train.learning_rate" => self.learning_rate = parse_num(key, value)?,
            "train.beta1" => self.beta1 = parse_num(key, value)?,
            "train.beta2" => self.beta2 = parse_num(key, value)?,
            "train.batch_size" => self.batch_size = parse_num(key, value)?,
            "train.epochs" => self.epochs = parse_num(key, value)?,
            "train.loss" => {
                self.loss = value.parse::<LossKind>().map_err(|e| ConfigError::InvalidValue {
                    key: key.to_string(),
                    reason: e.to_string(),
                })?
            }
            "train.seed" => self.train_seed = parse_num(key, value)?,
            "train.grad_clip" => self.grad_clip = Some(parse_num(key, value)?),
            "eval.threshold" => self.threshold = parse_num(key, value)?,
            "output.dir" => self.output_dir = PathBuf::from(value),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Required-key check for commands that touch the dataset on disk.
    pub fn require_dataset_root(&self) -> Result<&Path, ConfigError> {
        self.dataset_root
            .as_deref()
            .ok_or_else(|| ConfigError::MissingKey("dataset.root".to_string()))
    }

    /// Cross-field validation, naming the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.preprocess.validate().map_err(|e| ConfigError::InvalidValue {
            key: "preprocess.network_input".to_string(),
            reason: e.to_string(),
        })?;
        self.preprocess.normalization.validate().map_err(|reason| ConfigError::InvalidValue {
            key: "preprocess.imagenet_std".to_string(),
            reason,
        })?;
        self.augment.validate().map_err(|e| ConfigError::InvalidValue {
            key: "augment.ops".to_string(),
            reason: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ConfigError::InvalidValue {
                key: "eval.threshold".to_string(),
                reason: format!("{} outside [0, 1]", self.threshold),
            });
        }
        self.train_config().validate().map_err(|reason| ConfigError::InvalidValue {
            key: "train.learning_rate".to_string(),
            reason,
        })?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            batch_size: self.batch_size,
            epochs: self.epochs,
            loss: self.loss,
            seed: self.train_seed,
            augmentation: self.augment.clone(),
            preprocess: self.preprocess.clone(),
            checkpoint_dir: self.output_dir.join(&self.encoder).join("checkpoints"),
            grad_clip: self.grad_clip,
            threshold: self.threshold,
            config_hash: self.hash(),
        }
    }

    pub fn model_options(&self) -> crate::models::ModelOptions {
        crate::models::ModelOptions {
            decoder_channels: self.decoder_channels,
            base_channels: self.base_channels,
            depth: self.depth,
            pretrained_dir: self.pretrained_dir.clone(),
            freeze_encoder: false,
        }
    }

    /// `NormalizationSpec` consistency helper for docs/tests.
    pub fn normalization(&self) -> &NormalizationSpec {
        &self.preprocess.normalization
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_losslessly() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_config_string();
        let parsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.hash(), cfg.hash());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig::default();
        assert_eq!(a.hash(), b.hash());
        let mut c = ExperimentConfig::default();
        c.epochs = 51;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn hash_ignores_formatting_noise() {
        let text = "train.epochs = 50\n# comment\n\ntrain.batch_size=2\n";
        let a = ExperimentConfig::parse(text).unwrap();
        let b = ExperimentConfig::parse("train.batch_size = 2\ntrain.epochs=50").unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_key_is_named() {
        assert_eq!(
            ExperimentConfig::parse("dataset.rooot = /x").unwrap_err(),
            ConfigError::UnknownKey("dataset.rooot".into())
        );
    }

    #[test]
    fn invalid_value_names_the_key() {
        match ExperimentConfig::parse("train.epochs = many") {
            Err(ConfigError::InvalidValue { key, .. }) => assert_eq!(key, "train.epochs"),
            other => panic!("expected InvalidValue, got {other:?}"),
        }
    }

    #[test]
    fn missing_dataset_root_is_reported_by_name() {
        let cfg = ExperimentConfig::default();
        assert_eq!(
            cfg.require_dataset_root().unwrap_err(),
            ConfigError::MissingKey("dataset.root".into())
        );
    }

    #[test]
    fn augment_ops_parse_ordered_list() {
        let cfg = ExperimentConfig::parse("augment.ops = vflip:0.5, hflip:0.25, zoom:1.0").unwrap();
        assert_eq!(cfg.augment.ops.len(), 3);
        assert_eq!(cfg.augment.ops[1].op, AugmentOp::HorizontalFlip);
        assert_eq!(cfg.augment.ops[1].probability, 0.25);
        assert_eq!(cfg.augment.ops[2].op, AugmentOp::Zoom);
    }

    #[test]
    fn unknown_augment_op_is_invalid_value() {
        match ExperimentConfig::parse("augment.ops = elastic:0.5") {
            Err(ConfigError::InvalidValue { key, reason }) => {
                assert_eq!(key, "augment.ops");
                assert!(reason.contains("elastic"));
            }
            other => panic!("expected InvalidValue, got {other:?}"),
        }
    }

    #[test]
    fn sizes_parse_as_width_by_height() {
        let cfg = ExperimentConfig::parse("preprocess.network_input = 256x192").unwrap();
        assert_eq!(cfg.preprocess.network_input, (256, 192));
        assert!(ExperimentConfig::parse("preprocess.crop = 500by500").is_err());
    }

    #[test]
    fn validate_rejects_non_divisible_input() {
        let cfg = ExperimentConfig::parse("preprocess.network_input = 500x512").unwrap();
        match cfg.validate() {
            Err(ConfigError::InvalidValue { key, .. }) => assert_eq!(key, "preprocess.network_input"),
            other => panic!("expected InvalidValue, got {other:?}"),
        }
    }
}
