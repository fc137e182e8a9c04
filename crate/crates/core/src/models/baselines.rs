//! Baseline architectures: the symmetric U-Net (skip concatenation) and
//! SegNet (pooling-indices unpooling, no skips).

use polypseg_tensor::{ConvCfg, Graph, InitRng, ParamStore, PoolCfg, Scalar, Value};

use super::nn::{Conv2d, ConvBn};

/// Two conv-bn-relu layers at a fixed width.
#[derive(Debug, Clone)]
struct DoubleConv {
    c1: ConvBn,
    c2: ConvBn,
}

impl DoubleConv {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, c_in: usize, c_out: usize) -> Self {
        DoubleConv {
            c1: ConvBn::new(ps, rng, &format!("{name}.c1"), c_in, c_out, ConvCfg::same(3), true),
            c2: ConvBn::new(ps, rng, &format!("{name}.c2"), c_out, c_out, ConvCfg::same(3), true),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let y = self.c1.forward(g, ps, x);
        self.c2.forward(g, ps, &y)
    }
}

/// Symmetric U-Net: `depth` down steps doubling channels from
/// `base_channels`, a bottleneck, and mirrored up steps with skip
/// concatenation. Defaults (base 64, depth 4) give the classic
/// 64-128-256-512-1024 shape.
#[derive(Debug, Clone)]
pub(crate) struct UnetBaseline {
    enc: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    dec: Vec<DoubleConv>,
    head: Conv2d,
}

impl UnetBaseline {
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        rng: &mut InitRng,
        prefix: &str,
        base_channels: usize,
        depth: usize,
    ) -> Self {
        assert!(depth >= 1, "unet depth must be at least 1");
        let mut enc = Vec::with_capacity(depth);
        let mut c_in = 3;
        for i in 0..depth {
            let c_out = base_channels << i;
            enc.push(DoubleConv::new(ps, rng, &format!("{prefix}.enc{i}"), c_in, c_out));
            c_in = c_out;
        }
        let bottleneck = DoubleConv::new(ps, rng, &format!("{prefix}.bottleneck"), c_in, base_channels << depth);
        let mut dec = Vec::with_capacity(depth);
        for i in (0..depth).rev() {
            let c_skip = base_channels << i;
            let c_up = base_channels << (i + 1);
            dec.push(DoubleConv::new(ps, rng, &format!("{prefix}.dec{i}"), c_up + c_skip, c_skip));
        }
        let head = Conv2d::new(ps, rng, &format!("{prefix}.head"), base_channels, 1, ConvCfg::same(1), true);
        UnetBaseline { enc, bottleneck, dec, head }
    }

    /// Returns pre-sigmoid logits.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let mut x = x.clone();
        let mut skips = Vec::with_capacity(self.enc.len());
        for block in &self.enc {
            let y = block.forward(g, ps, &x);
            skips.push(y.clone());
            let (pooled, _) = g.max_pool(&y, PoolCfg::new(2, 2, 0));
            x = pooled;
        }
        x = self.bottleneck.forward(g, ps, &x);
        for (i, block) in self.dec.iter().enumerate() {
            let up = g.upsample_nearest2(&x);
            let skip = &skips[skips.len() - 1 - i];
            let merged = g.concat_channels(&[&up, skip]);
            x = block.forward(g, ps, &merged);
        }
        self.head.forward(g, ps, &x)
    }
}

/// SegNet: VGG16-style conv-bn-relu encoder whose 2x2 pooling indices drive
/// decoder max-unpooling; no skip concatenation anywhere.
#[derive(Debug, Clone)]
pub(crate) struct SegNet {
    enc_stages: Vec<Vec<ConvBn>>,
    dec_stages: Vec<Vec<ConvBn>>,
    head: Conv2d,
}

const SEGNET_ENC: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
const SEGNET_DEC: [&[usize]; 5] = [&[512, 512, 512], &[512, 512, 256], &[256, 256, 128], &[128, 64], &[64]];

impl SegNet {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, prefix: &str) -> Self {
        let mut c_in = 3;
        let mut enc_stages = Vec::with_capacity(5);
        for (si, widths) in SEGNET_ENC.iter().enumerate() {
            let mut stage = Vec::with_capacity(widths.len());
            for (ci, &c_out) in widths.iter().enumerate() {
                stage.push(ConvBn::new(
                    ps,
                    rng,
                    &format!("{prefix}.enc{}.conv{ci}", si + 1),
                    c_in,
                    c_out,
                    ConvCfg::same(3),
                    true,
                ));
                c_in = c_out;
            }
            enc_stages.push(stage);
        }
        let mut dec_stages = Vec::with_capacity(5);
        for (si, widths) in SEGNET_DEC.iter().enumerate() {
            let mut stage = Vec::with_capacity(widths.len());
            for (ci, &c_out) in widths.iter().enumerate() {
                stage.push(ConvBn::new(
                    ps,
                    rng,
                    &format!("{prefix}.dec{}.conv{ci}", 5 - si),
                    c_in,
                    c_out,
                    ConvCfg::same(3),
                    true,
                ));
                c_in = c_out;
            }
            dec_stages.push(stage);
        }
        let head = Conv2d::new(ps, rng, &format!("{prefix}.head"), c_in, 1, ConvCfg::same(3), true);
        SegNet { enc_stages, dec_stages, head }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let mut x = x.clone();
        let mut indices = Vec::with_capacity(5);
        for stage in &self.enc_stages {
            for conv in stage {
                x = conv.forward(g, ps, &x);
            }
            let (pooled, idx) = g.max_pool(&x, PoolCfg::new(2, 2, 0));
            indices.push(idx);
            x = pooled;
        }
        for (i, stage) in self.dec_stages.iter().enumerate() {
            let idx = &indices[indices.len() - 1 - i];
            x = g.max_unpool(&x, idx);
            for conv in stage {
                x = conv.forward(g, ps, &x);
            }
        }
        self.head.forward(g, ps, &x)
    }
}
