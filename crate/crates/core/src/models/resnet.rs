//! Residual-family encoders: ResNet-34/50/152 and SE-ResNeXt-50/101.
//!
//! The stride-2 stem convolution output (after ReLU) is the first tap;
//! stages 1–4 supply the remaining taps at strides 4/8/16/32.

use polypseg_tensor::{ConvCfg, Graph, InitRng, ParamStore, PoolCfg, Scalar, Value};

use super::nn::{BatchNorm2d, Conv2d, ConvBn, SeBlock, Taps};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ResNetConfig {
    pub blocks: [usize; 4],
    pub bottleneck: bool,
    pub groups: usize,
    pub width_per_group: usize,
    pub se: bool,
}

impl ResNetConfig {
    pub fn resnet34() -> Self {
        ResNetConfig { blocks: [3, 4, 6, 3], bottleneck: false, groups: 1, width_per_group: 64, se: false }
    }
    pub fn resnet50() -> Self {
        ResNetConfig { blocks: [3, 4, 6, 3], bottleneck: true, groups: 1, width_per_group: 64, se: false }
    }
    pub fn resnet152() -> Self {
        ResNetConfig { blocks: [3, 8, 36, 3], bottleneck: true, groups: 1, width_per_group: 64, se: false }
    }
    pub fn se_resnext50() -> Self {
        ResNetConfig { blocks: [3, 4, 6, 3], bottleneck: true, groups: 32, width_per_group: 4, se: true }
    }
    pub fn se_resnext101() -> Self {
        ResNetConfig { blocks: [3, 4, 23, 3], bottleneck: true, groups: 32, width_per_group: 4, se: true }
    }

    pub fn expansion(&self) -> usize {
        if self.bottleneck {
            4
        } else {
            1
        }
    }

    /// Channels of the five taps.
    pub fn tap_channels(&self) -> [usize; 5] {
        let e = self.expansion();
        [64, 64 * e, 128 * e, 256 * e, 512 * e]
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    // basic: conv1/conv2; bottleneck: conv1 (1x1) / conv2 (3x3) / conv3 (1x1)
    conv1: ConvBn,
    conv2: ConvBn,
    conv3: Option<ConvBn>,
    se: Option<SeBlock>,
    downsample: Option<ConvBn>,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        rng: &mut InitRng,
        name: &str,
        c_in: usize,
        planes: usize,
        stride: usize,
        cfg: &ResNetConfig,
    ) -> Self {
        let c_out = planes * cfg.expansion();
        let downsample = (stride != 1 || c_in != c_out).then(|| {
            ConvBn::new(ps, rng, &format!("{name}.downsample"), c_in, c_out, ConvCfg::same(1).with_stride(stride), false)
        });
        if cfg.bottleneck {
            let width = planes * cfg.width_per_group / 64 * cfg.groups;
            ResBlock {
                conv1: ConvBn::new(ps, rng, &format!("{name}.conv1"), c_in, width, ConvCfg::same(1), true),
                conv2: ConvBn::new(
                    ps,
                    rng,
                    &format!("{name}.conv2"),
                    width,
                    width,
                    ConvCfg::same(3).with_stride(stride).with_groups(cfg.groups),
                    true,
                ),
                conv3: Some(ConvBn::new(ps, rng, &format!("{name}.conv3"), width, c_out, ConvCfg::same(1), false)),
                se: cfg.se.then(|| SeBlock::new(ps, rng, &format!("{name}.se"), c_out, 16)),
                downsample,
            }
        } else {
            ResBlock {
                conv1: ConvBn::new(ps, rng, &format!("{name}.conv1"), c_in, planes, ConvCfg::same(3).with_stride(stride), true),
                conv2: ConvBn::new(ps, rng, &format!("{name}.conv2"), planes, planes, ConvCfg::same(3), false),
                conv3: None,
                se: cfg.se.then(|| SeBlock::new(ps, rng, &format!("{name}.se"), planes, 16)),
                downsample,
            }
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let mut out = self.conv1.forward(g, ps, x);
        out = self.conv2.forward(g, ps, &out);
        if let Some(c3) = &self.conv3 {
            out = c3.forward(g, ps, &out);
        }
        if let Some(se) = &self.se {
            out = se.forward(g, ps, &out);
        }
        let identity = match &self.downsample {
            Some(d) => d.forward(g, ps, x),
            None => x.clone(),
        };
        let sum = g.add(&out, &identity);
        g.relu(&sum)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ResNetEncoder {
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    stages: [Vec<ResBlock>; 4],
}

impl ResNetEncoder {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, prefix: &str, cfg: &ResNetConfig) -> Self {
        let stem_conv = Conv2d::new(
            ps,
            rng,
            &format!("{prefix}.stem.conv"),
            3,
            64,
            ConvCfg { kh: 7, kw: 7, stride: 2, ph: 3, pw: 3, groups: 1 },
            false,
        );
        let stem_bn = BatchNorm2d::new(ps, &format!("{prefix}.stem.bn"), 64);
        let mut c_in = 64;
        let mut stages: [Vec<ResBlock>; 4] = [vec![], vec![], vec![], vec![]];
        for (si, stage) in stages.iter_mut().enumerate() {
            let planes = 64 << si;
            let stride = if si == 0 { 1 } else { 2 };
            for bi in 0..cfg.blocks[si] {
                let s = if bi == 0 { stride } else { 1 };
                stage.push(ResBlock::new(ps, rng, &format!("{prefix}.layer{}.{bi}", si + 1), c_in, planes, s, cfg));
                c_in = planes * cfg.expansion();
            }
        }
        ResNetEncoder { stem_conv, stem_bn, stages }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Taps<T> {
        let x = self.stem_conv.forward(g, ps, x);
        let x = self.stem_bn.forward(g, ps, &x);
        let tap1 = g.relu(&x);
        let (mut x, _) = g.max_pool(&tap1, PoolCfg::new(3, 2, 1));
        let mut taps = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                x = block.forward(g, ps, &x);
            }
            taps.push(x.clone());
        }
        let [t2, t3, t4, t5] = <[Value<T>; 4]>::try_from(taps).ok().unwrap();
        [tap1, t2, t3, t4, t5]
    }
}
