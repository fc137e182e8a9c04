//! Shared U-Net decoder for backbone encoders: five stages of 2x nearest
//! upsampling, skip concatenation with the matching encoder tap, and two
//! conv-bn-relu blocks, followed by a 1-channel segmentation head.

use polypseg_tensor::{ConvCfg, Graph, InitRng, ParamStore, Scalar, Value};

use super::nn::{Conv2d, ConvBn, Taps};

pub const DEFAULT_DECODER_CHANNELS: [usize; 5] = [256, 128, 64, 32, 16];

#[derive(Debug, Clone)]
struct DecoderBlock {
    conv1: ConvBn,
    conv2: ConvBn,
}

impl DecoderBlock {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, c_in: usize, c_out: usize) -> Self {
        DecoderBlock {
            conv1: ConvBn::new(ps, rng, &format!("{name}.conv1"), c_in, c_out, ConvCfg::same(3), true),
            conv2: ConvBn::new(ps, rng, &format!("{name}.conv2"), c_out, c_out, ConvCfg::same(3), true),
        }
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &mut ParamStore<T>,
        x: &Value<T>,
        skip: Option<&Value<T>>,
    ) -> Value<T> {
        let up = g.upsample_nearest2(x);
        let merged = match skip {
            Some(s) => g.concat_channels(&[&up, s]),
            None => up,
        };
        let y = self.conv1.forward(g, ps, &merged);
        self.conv2.forward(g, ps, &y)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct UnetDecoder {
    blocks: Vec<DecoderBlock>,
    head: Conv2d,
}

impl UnetDecoder {
    /// `tap_channels` are the encoder tap widths at strides 2..32 (shallow
    /// to deep); `channels` the decoder stage widths (deep to shallow).
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        rng: &mut InitRng,
        prefix: &str,
        tap_channels: &[usize; 5],
        channels: &[usize; 5],
    ) -> Self {
        // Stage i consumes the previous width plus the skip at the matching
        // resolution: skips are taps[3], taps[2], taps[1], taps[0], none.
        let mut blocks = Vec::with_capacity(5);
        let mut c_prev = tap_channels[4];
        for (i, &c_out) in channels.iter().enumerate() {
            let skip_c = if i < 4 { tap_channels[3 - i] } else { 0 };
            blocks.push(DecoderBlock::new(ps, rng, &format!("{prefix}.stage{i}"), c_prev + skip_c, c_out));
            c_prev = c_out;
        }
        let head = Conv2d::new(ps, rng, &format!("{prefix}.head"), c_prev, 1, ConvCfg::same(3), true);
        UnetDecoder { blocks, head }
    }

    /// Returns pre-sigmoid logits at the input resolution.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, taps: &Taps<T>) -> Value<T> {
        let mut x = taps[4].clone();
        for (i, block) in self.blocks.iter().enumerate() {
            let skip = if i < 4 { Some(&taps[3 - i]) } else { None };
            x = block.forward(g, ps, &x, skip);
        }
        self.head.forward(g, ps, &x)
    }
}
