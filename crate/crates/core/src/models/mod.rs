//! Model zoo: U-Net style encoder-decoder segmentation models over a
//! registry of encoder backbones, plus plain U-Net and SegNet baselines.
//!
//! Every model maps an RGB batch `[n, 3, h, w]` (h, w divisible by 32) to
//! per-pixel polyp probabilities `[n, 1, h, w]` through a final sigmoid.
//! Backbone models tap the encoder at output strides 2/4/8/16/32 and fuse
//! the taps into the shared decoder by skip concatenation.

mod baselines;
mod checkpoint;
mod decoder;
mod densenet;
mod inception;
mod inception_resnet;
mod nn;
mod resnet;
mod vgg;

use std::path::PathBuf;

use polypseg_tensor::{Graph, InitRng, ParamStore, Scalar, Tensor, Value};
use thiserror::Error;

use baselines::{SegNet, UnetBaseline};
pub use checkpoint::{
    export_encoder_weights, load_checkpoint, load_pretrained_encoder, save_checkpoint, ModelCheckpoint,
};
use decoder::UnetDecoder;
pub use decoder::DEFAULT_DECODER_CHANNELS;
use densenet::{DenseNetConfig, DenseNetEncoder};
use inception::{InceptionV3Encoder, INCEPTION_V3_TAPS};
use inception_resnet::{InceptionResNetV2Encoder, INCEPTION_RESNET_V2_TAPS};
use resnet::{ResNetConfig, ResNetEncoder};
use vgg::{VggEncoder, VGG16_TAPS};

pub const UNET_BASELINE: &str = "unet_baseline";
pub const SEGNET_BASELINE: &str = "segnet_baseline";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown encoder: {0}")]
    UnknownEncoder(String),
    #[error("invalid input size {0}x{1}: both sides must be positive multiples of 32")]
    InvalidInputSize(usize, usize),
    #[error("batch shape mismatch: expected [n, 3, {expected_h}, {expected_w}], got {got:?}")]
    ShapeMismatch { expected_h: usize, expected_w: usize, got: [usize; 4] },
    #[error("pretrained weights unavailable for {encoder}: no file at {path}")]
    PretrainedUnavailable { encoder: String, path: PathBuf },
    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PretrainedSource {
    Imagenet,
    None,
}

/// A backbone's identity: tap layer names at output strides 2/4/8/16/32 and
/// the channel width of each tap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub name: &'static str,
    pub taps: [&'static str; 5],
    pub tap_channels: [usize; 5],
    pub pretrained_source: PretrainedSource,
}

impl EncoderSpec {
    /// Output strides of the five taps (fixed by construction).
    pub fn strides(&self) -> [usize; 5] {
        [2, 4, 8, 16, 32]
    }
}

const RESNET_TAP_NAMES: [&str; 5] = ["stem.relu", "layer1", "layer2", "layer3", "layer4"];
const DENSENET_TAP_NAMES: [&str; 5] = ["stem.relu", "block1", "block2", "block3", "final_bn.relu"];

/// All registered encoder backbones, in stable registry order.
pub fn list_encoders() -> Vec<EncoderSpec> {
    vec![
        EncoderSpec {
            name: "resnet34",
            taps: RESNET_TAP_NAMES,
            tap_channels: ResNetConfig::resnet34().tap_channels(),
            pretrained_source: PretrainedSource::Imagenet,
        },
        EncoderSpec {
            name: "resnet50",
            taps: RESNET_TAP_NAMES,
            tap_channels: ResNetConfig::resnet50().tap_channels(),
            pretrained_source: PretrainedSource::Imagenet,
        },
        EncoderSpec {
            name: "resnet152",
            taps: RESNET_TAP_NAMES,
            tap_channels: ResNetConfig::resnet152().tap_channels(),
            pretrained_source: PretrainedSource::Imagenet,
        },
        EncoderSpec {
            name: "densenet121",
            taps: DENSENET_TAP_NAMES,
            tap_channels: DenseNetConfig::densenet121().tap_channels(),
            pretrained_source: PretrainedSource::Imagenet,
        },
        EncoderSpec {
            name: "densenet169",
            taps: DENSENET_TAP_NAMES,
            tap_channels: DenseNetConfig::densenet169().tap_channels(),
            pretrained_source: PretrainedSource::Imagenet,
        },
        EncoderSpec {
            name: "densenet201",
            taps: DENSENET_TAP_NAMES,
            tap_channels: DenseNetConfig::densenet201().tap_channels(),
            pretrained_source: PretrainedSource::Imagenet,
        },
        EncoderSpec {
            name: "inceptionv3",
            taps: ["stem3", "stem5", "mixed_a2", "mixed_b3", "mixed_c1"],
            tap_channels: INCEPTION_V3_TAPS,
            pretrained_source: PretrainedSource::Imagenet,
        },
        EncoderSpec {
            name: "inceptionresnetv2",
            taps: ["stem3", "stem5", "block35_9", "block17_19", "conv_7b"],
            tap_channels: INCEPTION_RESNET_V2_TAPS,
            pretrained_source: PretrainedSource::Imagenet,
        },
        EncoderSpec {
            name: "se_resnext50",
            taps: RESNET_TAP_NAMES,
            tap_channels: ResNetConfig::se_resnext50().tap_channels(),
            pretrained_source: PretrainedSource::Imagenet,
        },
        EncoderSpec {
            name: "se_resnext101",
            taps: RESNET_TAP_NAMES,
            tap_channels: ResNetConfig::se_resnext101().tap_channels(),
            pretrained_source: PretrainedSource::Imagenet,
        },
        EncoderSpec {
            name: "vgg16",
            taps: ["stage2.relu1", "stage3.relu2", "stage4.relu2", "stage5.relu2", "pool5"],
            tap_channels: VGG16_TAPS,
            pretrained_source: PretrainedSource::Imagenet,
        },
    ]
}

pub fn encoder_spec(name: &str) -> Option<EncoderSpec> {
    list_encoders().into_iter().find(|s| s.name == name)
}

/// Plain-text architecture identity stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArchDescriptor {
    pub format_version: u32,
    pub encoder: String,
    /// (width, height) of the expected network input.
    pub input: (usize, usize),
    /// Decoder stage widths, deep to shallow (backbone models only).
    pub decoder_channels: Vec<usize>,
    /// Baseline width scaling (unet/segnet baselines; 64 = canonical).
    pub base_channels: usize,
    /// Number of down-steps in the baseline U-Net.
    pub depth: usize,
    pub seed: u64,
    pub skip_connections: bool,
}

/// Build-time knobs beyond the required arguments. Defaults follow the
/// declared design choices (decoder 256/128/64/32/16, canonical baselines).
#[derive(Debug, Clone)]
pub struct ModelOptions {
    pub decoder_channels: [usize; 5],
    pub base_channels: usize,
    pub depth: usize,
    /// Directory holding `<encoder>.pst` weight containers; falls back to
    /// the `POLYPSEG_PRETRAINED_DIR` environment variable.
    pub pretrained_dir: Option<PathBuf>,
    /// Freeze encoder parameters after (optional) weight loading.
    pub freeze_encoder: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            decoder_channels: DEFAULT_DECODER_CHANNELS,
            base_channels: 64,
            depth: 4,
            pretrained_dir: None,
            freeze_encoder: false,
        }
    }
}

#[derive(Clone)]
enum EncoderNet {
    ResNet(ResNetEncoder),
    Dense(DenseNetEncoder),
    Inc3(InceptionV3Encoder),
    IncRes(InceptionResNetV2Encoder),
    Vgg(VggEncoder),
}

impl EncoderNet {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> nn::Taps<T> {
        match self {
            EncoderNet::ResNet(e) => e.forward(g, ps, x),
            EncoderNet::Dense(e) => e.forward(g, ps, x),
            EncoderNet::Inc3(e) => e.forward(g, ps, x),
            EncoderNet::IncRes(e) => e.forward(g, ps, x),
            EncoderNet::Vgg(e) => e.forward(g, ps, x),
        }
    }
}

#[derive(Clone)]
enum Net {
    Backbone { encoder: EncoderNet, decoder: UnetDecoder },
    Unet(UnetBaseline),
    Segnet(SegNet),
}

/// Encoder-decoder segmentation model: owns its parameters and exposes
/// training-mode (differentiable) and inference forwards.
#[derive(Clone)]
pub struct SegmentationModel<T: Scalar> {
    pub descriptor: ArchDescriptor,
    store: ParamStore<T>,
    net: Net,
}

fn validate_input_size(w: usize, h: usize) -> Result<(), ModelError> {
    if w == 0 || h == 0 || w % 32 != 0 || h % 32 != 0 {
        return Err(ModelError::InvalidInputSize(w, h));
    }
    Ok(())
}

/// Build a segmentation model for any registered encoder or baseline name.
pub fn build_model<T: Scalar>(
    encoder_name: &str,
    input_size: (usize, usize),
    pretrained: bool,
    seed: u64,
) -> Result<SegmentationModel<T>, ModelError> {
    build_model_with(encoder_name, input_size, pretrained, seed, &ModelOptions::default())
}

pub fn build_model_with<T: Scalar>(
    encoder_name: &str,
    input_size: (usize, usize),
    pretrained: bool,
    seed: u64,
    options: &ModelOptions,
) -> Result<SegmentationModel<T>, ModelError> {
    let (w, h) = input_size;
    validate_input_size(w, h)?;
    let mut store = ParamStore::<T>::new();
    let mut rng = InitRng::new(seed);

    let (net, decoder_channels, skip_connections) = match encoder_name {
        UNET_BASELINE => {
            let net = UnetBaseline::new(&mut store, &mut rng, "unet", options.base_channels, options.depth);
            (Net::Unet(net), Vec::new(), true)
        }
        SEGNET_BASELINE => {
            let net = SegNet::new(&mut store, &mut rng, "segnet");
            (Net::Segnet(net), Vec::new(), false)
        }
        name => {
            let spec = encoder_spec(name).ok_or_else(|| ModelError::UnknownEncoder(name.to_string()))?;
            let encoder = match name {
                "resnet34" => EncoderNet::ResNet(ResNetEncoder::new(&mut store, &mut rng, "encoder", &ResNetConfig::resnet34())),
                "resnet50" => EncoderNet::ResNet(ResNetEncoder::new(&mut store, &mut rng, "encoder", &ResNetConfig::resnet50())),
                "resnet152" => EncoderNet::ResNet(ResNetEncoder::new(&mut store, &mut rng, "encoder", &ResNetConfig::resnet152())),
                "densenet121" => EncoderNet::Dense(DenseNetEncoder::new(&mut store, &mut rng, "encoder", &DenseNetConfig::densenet121())),
                "densenet169" => EncoderNet::Dense(DenseNetEncoder::new(&mut store, &mut rng, "encoder", &DenseNetConfig::densenet169())),
                "densenet201" => EncoderNet::Dense(DenseNetEncoder::new(&mut store, &mut rng, "encoder", &DenseNetConfig::densenet201())),
                "inceptionv3" => EncoderNet::Inc3(InceptionV3Encoder::new(&mut store, &mut rng, "encoder")),
                "inceptionresnetv2" => EncoderNet::IncRes(InceptionResNetV2Encoder::new(&mut store, &mut rng, "encoder")),
                "se_resnext50" => EncoderNet::ResNet(ResNetEncoder::new(&mut store, &mut rng, "encoder", &ResNetConfig::se_resnext50())),
                "se_resnext101" => EncoderNet::ResNet(ResNetEncoder::new(&mut store, &mut rng, "encoder", &ResNetConfig::se_resnext101())),
                "vgg16" => EncoderNet::Vgg(VggEncoder::new(&mut store, &mut rng, "encoder")),
                _ => unreachable!("registered encoder without builder"),
            };
            let decoder = UnetDecoder::new(&mut store, &mut rng, "decoder", &spec.tap_channels, &options.decoder_channels);
            (
                Net::Backbone { encoder, decoder },
                options.decoder_channels.to_vec(),
                true,
            )
        }
    };

    if pretrained {
        let dir = options
            .pretrained_dir
            .clone()
            .or_else(|| std::env::var_os("POLYPSEG_PRETRAINED_DIR").map(PathBuf::from));
        let path = dir.unwrap_or_default().join(format!("{encoder_name}.pst"));
        if !path.is_file() {
            return Err(ModelError::PretrainedUnavailable { encoder: encoder_name.to_string(), path });
        }
        load_pretrained_encoder(&mut store, &path)?;
    }
    if options.freeze_encoder {
        store.freeze_prefix("encoder.");
    }

    let descriptor = ArchDescriptor {
        format_version: 1,
        encoder: encoder_name.to_string(),
        input: input_size,
        decoder_channels,
        base_channels: options.base_channels,
        depth: options.depth,
        seed,
        skip_connections,
    };
    Ok(SegmentationModel { descriptor, store, net })
}

/// Build one of the two baselines (`unet_baseline`, `segnet_baseline`).
pub fn build_baseline<T: Scalar>(
    name: &str,
    input_size: (usize, usize),
    seed: u64,
) -> Result<SegmentationModel<T>, ModelError> {
    if name != UNET_BASELINE && name != SEGNET_BASELINE {
        return Err(ModelError::UnknownEncoder(name.to_string()));
    }
    build_model(name, input_size, false, seed)
}

impl<T: Scalar> SegmentationModel<T> {
    /// Differentiable forward: per-pixel probabilities `[n, 1, h, w]`.
    /// In training-mode graphs batch-norm uses batch statistics and updates
    /// the running buffers.
    pub fn forward(&mut self, g: &mut Graph<T>, batch: &Tensor<T>) -> Result<Value<T>, ModelError> {
        let shape = batch.shape();
        let (w, h) = self.descriptor.input;
        if shape[1] != 3 || shape[2] != h || shape[3] != w {
            return Err(ModelError::ShapeMismatch { expected_h: h, expected_w: w, got: shape });
        }
        let x = g.constant(batch.clone());
        let logits = match &self.net {
            Net::Backbone { encoder, decoder } => {
                let taps = encoder.forward(g, &mut self.store, &x);
                decoder.forward(g, &mut self.store, &taps)
            }
            Net::Unet(net) => net.forward(g, &mut self.store, &x),
            Net::Segnet(net) => net.forward(g, &mut self.store, &x),
        };
        Ok(g.sigmoid(&logits))
    }

    /// Inference-mode forward returning a plain tensor.
    pub fn predict(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::inference();
        let out = self.forward(&mut g, batch)?;
        Ok(g.tensor(&out))
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_elements()
    }

    pub fn freeze_encoder(&mut self) {
        self.store.freeze_prefix("encoder.");
    }

    /// Stable fingerprint of all parameter bytes (diagnostics, resume tests).
    pub fn param_fingerprint(&self) -> u64 {
        let mut hash = 0xcbf29ce484222325u64;
        for (_, _, t) in self.store.iter_params() {
            for v in t.data() {
                let bits = v.to_f64_().to_bits();
                hash ^= bits;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
        hash
    }
}
