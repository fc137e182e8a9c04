//! Inception-ResNet-v2 encoder (padding-preserving variant): inception-style
//! multi-branch blocks whose concatenated output is projected by a linear
//! 1x1 convolution, scaled, and added back to the block input.
//! Stage widths match the canonical model: 64, 192, 320, 1088, 1536.

use polypseg_tensor::{ConvCfg, Graph, InitRng, ParamStore, PoolCfg, Scalar, Value};

use super::nn::{Conv2d, ConvBn, Taps};

pub(crate) const INCEPTION_RESNET_V2_TAPS: [usize; 5] = [64, 192, 320, 1088, 1536];

fn cbr<T: Scalar>(
    ps: &mut ParamStore<T>,
    rng: &mut InitRng,
    name: &str,
    c_in: usize,
    c_out: usize,
    cfg: ConvCfg,
) -> ConvBn {
    ConvBn::new(ps, rng, name, c_in, c_out, cfg, true)
}

/// First multi-branch block after the stem (no residual), output 320.
#[derive(Debug, Clone)]
struct Mixed5b {
    b0: ConvBn,
    b1_0: ConvBn,
    b1_1: ConvBn,
    b2_0: ConvBn,
    b2_1: ConvBn,
    b2_2: ConvBn,
    pool_proj: ConvBn,
}

impl Mixed5b {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str) -> Self {
        Mixed5b {
            b0: cbr(ps, rng, &format!("{name}.b0"), 192, 96, ConvCfg::same(1)),
            b1_0: cbr(ps, rng, &format!("{name}.b1_0"), 192, 48, ConvCfg::same(1)),
            b1_1: cbr(ps, rng, &format!("{name}.b1_1"), 48, 64, ConvCfg::same(5)),
            b2_0: cbr(ps, rng, &format!("{name}.b2_0"), 192, 64, ConvCfg::same(1)),
            b2_1: cbr(ps, rng, &format!("{name}.b2_1"), 64, 96, ConvCfg::same(3)),
            b2_2: cbr(ps, rng, &format!("{name}.b2_2"), 96, 96, ConvCfg::same(3)),
            pool_proj: cbr(ps, rng, &format!("{name}.pool_proj"), 192, 64, ConvCfg::same(1)),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let a = self.b0.forward(g, ps, x);
        let b = self.b1_0.forward(g, ps, x);
        let b = self.b1_1.forward(g, ps, &b);
        let c = self.b2_0.forward(g, ps, x);
        let c = self.b2_1.forward(g, ps, &c);
        let c = self.b2_2.forward(g, ps, &c);
        let p = g.avg_pool(x, PoolCfg::new(3, 1, 1));
        let p = self.pool_proj.forward(g, ps, &p);
        g.concat_channels(&[&a, &b, &c, &p])
    }
}

/// Residual block template: branches -> concat -> linear 1x1 projection ->
/// scale -> add -> (optional) ReLU.
#[derive(Debug, Clone)]
struct ResidualBlock {
    branches: Branches,
    project: Conv2d,
    scale: f64,
    relu: bool,
}

#[derive(Debug, Clone)]
enum Branches {
    /// block35: 1x1 | 1x1-3x3 | 1x1-3x3-3x3
    B35 { a: ConvBn, b0: ConvBn, b1: ConvBn, c0: ConvBn, c1: ConvBn, c2: ConvBn },
    /// block17: 1x1 | 1x1-1x7-7x1
    B17 { a: ConvBn, b0: ConvBn, b1: ConvBn, b2: ConvBn },
    /// block8: 1x1 | 1x1-1x3-3x1
    B8 { a: ConvBn, b0: ConvBn, b1: ConvBn, b2: ConvBn },
}

impl ResidualBlock {
    fn block35<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, scale: f64) -> Self {
        let branches = Branches::B35 {
            a: cbr(ps, rng, &format!("{name}.a"), 320, 32, ConvCfg::same(1)),
            b0: cbr(ps, rng, &format!("{name}.b0"), 320, 32, ConvCfg::same(1)),
            b1: cbr(ps, rng, &format!("{name}.b1"), 32, 32, ConvCfg::same(3)),
            c0: cbr(ps, rng, &format!("{name}.c0"), 320, 32, ConvCfg::same(1)),
            c1: cbr(ps, rng, &format!("{name}.c1"), 32, 48, ConvCfg::same(3)),
            c2: cbr(ps, rng, &format!("{name}.c2"), 48, 64, ConvCfg::same(3)),
        };
        let project = Conv2d::new(ps, rng, &format!("{name}.project"), 128, 320, ConvCfg::same(1), true);
        ResidualBlock { branches, project, scale, relu: true }
    }

    fn block17<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, scale: f64) -> Self {
        let branches = Branches::B17 {
            a: cbr(ps, rng, &format!("{name}.a"), 1088, 192, ConvCfg::same(1)),
            b0: cbr(ps, rng, &format!("{name}.b0"), 1088, 128, ConvCfg::same(1)),
            b1: cbr(ps, rng, &format!("{name}.b1"), 128, 160, ConvCfg::rect(1, 7)),
            b2: cbr(ps, rng, &format!("{name}.b2"), 160, 192, ConvCfg::rect(7, 1)),
        };
        let project = Conv2d::new(ps, rng, &format!("{name}.project"), 384, 1088, ConvCfg::same(1), true);
        ResidualBlock { branches, project, scale, relu: true }
    }

    fn block8<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, scale: f64, relu: bool) -> Self {
        let branches = Branches::B8 {
            a: cbr(ps, rng, &format!("{name}.a"), 2080, 192, ConvCfg::same(1)),
            b0: cbr(ps, rng, &format!("{name}.b0"), 2080, 192, ConvCfg::same(1)),
            b1: cbr(ps, rng, &format!("{name}.b1"), 192, 224, ConvCfg::rect(1, 3)),
            b2: cbr(ps, rng, &format!("{name}.b2"), 224, 256, ConvCfg::rect(3, 1)),
        };
        let project = Conv2d::new(ps, rng, &format!("{name}.project"), 448, 2080, ConvCfg::same(1), true);
        ResidualBlock { branches, project, scale, relu }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let cat = match &self.branches {
            Branches::B35 { a, b0, b1, c0, c1, c2 } => {
                let va = a.forward(g, ps, x);
                let vb = b0.forward(g, ps, x);
                let vb = b1.forward(g, ps, &vb);
                let vc = c0.forward(g, ps, x);
                let vc = c1.forward(g, ps, &vc);
                let vc = c2.forward(g, ps, &vc);
                g.concat_channels(&[&va, &vb, &vc])
            }
            Branches::B17 { a, b0, b1, b2 } | Branches::B8 { a, b0, b1, b2 } => {
                let va = a.forward(g, ps, x);
                let vb = b0.forward(g, ps, x);
                let vb = b1.forward(g, ps, &vb);
                let vb = b2.forward(g, ps, &vb);
                g.concat_channels(&[&va, &vb])
            }
        };
        let proj = self.project.forward(g, ps, &cat);
        let scaled = g.mul_const(&proj, self.scale);
        let sum = g.add(x, &scaled);
        if self.relu {
            g.relu(&sum)
        } else {
            sum
        }
    }
}

/// Stride-2 reduction 320 -> 1088.
#[derive(Debug, Clone)]
struct Mixed6a {
    b0: ConvBn,
    b1_0: ConvBn,
    b1_1: ConvBn,
    b1_2: ConvBn,
}

impl Mixed6a {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str) -> Self {
        Mixed6a {
            b0: cbr(ps, rng, &format!("{name}.b0"), 320, 384, ConvCfg::same(3).with_stride(2)),
            b1_0: cbr(ps, rng, &format!("{name}.b1_0"), 320, 256, ConvCfg::same(1)),
            b1_1: cbr(ps, rng, &format!("{name}.b1_1"), 256, 256, ConvCfg::same(3)),
            b1_2: cbr(ps, rng, &format!("{name}.b1_2"), 256, 384, ConvCfg::same(3).with_stride(2)),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let a = self.b0.forward(g, ps, x);
        let b = self.b1_0.forward(g, ps, x);
        let b = self.b1_1.forward(g, ps, &b);
        let b = self.b1_2.forward(g, ps, &b);
        let (p, _) = g.max_pool(x, PoolCfg::new(3, 2, 1));
        g.concat_channels(&[&a, &b, &p])
    }
}

/// Stride-2 reduction 1088 -> 2080.
#[derive(Debug, Clone)]
struct Mixed7a {
    b0_0: ConvBn,
    b0_1: ConvBn,
    b1_0: ConvBn,
    b1_1: ConvBn,
    b2_0: ConvBn,
    b2_1: ConvBn,
    b2_2: ConvBn,
}

impl Mixed7a {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str) -> Self {
        Mixed7a {
            b0_0: cbr(ps, rng, &format!("{name}.b0_0"), 1088, 256, ConvCfg::same(1)),
            b0_1: cbr(ps, rng, &format!("{name}.b0_1"), 256, 384, ConvCfg::same(3).with_stride(2)),
            b1_0: cbr(ps, rng, &format!("{name}.b1_0"), 1088, 256, ConvCfg::same(1)),
            b1_1: cbr(ps, rng, &format!("{name}.b1_1"), 256, 288, ConvCfg::same(3).with_stride(2)),
            b2_0: cbr(ps, rng, &format!("{name}.b2_0"), 1088, 256, ConvCfg::same(1)),
            b2_1: cbr(ps, rng, &format!("{name}.b2_1"), 256, 288, ConvCfg::same(3)),
            b2_2: cbr(ps, rng, &format!("{name}.b2_2"), 288, 320, ConvCfg::same(3).with_stride(2)),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let a = self.b0_0.forward(g, ps, x);
        let a = self.b0_1.forward(g, ps, &a);
        let b = self.b1_0.forward(g, ps, x);
        let b = self.b1_1.forward(g, ps, &b);
        let c = self.b2_0.forward(g, ps, x);
        let c = self.b2_1.forward(g, ps, &c);
        let c = self.b2_2.forward(g, ps, &c);
        let (p, _) = g.max_pool(x, PoolCfg::new(3, 2, 1));
        g.concat_channels(&[&a, &b, &c, &p])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct InceptionResNetV2Encoder {
    stem1: ConvBn,
    stem2: ConvBn,
    stem3: ConvBn,
    stem4: ConvBn,
    stem5: ConvBn,
    mixed_5b: Mixed5b,
    block35: Vec<ResidualBlock>,
    mixed_6a: Mixed6a,
    block17: Vec<ResidualBlock>,
    mixed_7a: Mixed7a,
    block8: Vec<ResidualBlock>,
    conv_7b: ConvBn,
}

impl InceptionResNetV2Encoder {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, prefix: &str) -> Self {
        let stem1 = cbr(ps, rng, &format!("{prefix}.stem1"), 3, 32, ConvCfg::same(3).with_stride(2));
        let stem2 = cbr(ps, rng, &format!("{prefix}.stem2"), 32, 32, ConvCfg::same(3));
        let stem3 = cbr(ps, rng, &format!("{prefix}.stem3"), 32, 64, ConvCfg::same(3));
        let stem4 = cbr(ps, rng, &format!("{prefix}.stem4"), 64, 80, ConvCfg::same(1));
        let stem5 = cbr(ps, rng, &format!("{prefix}.stem5"), 80, 192, ConvCfg::same(3));
        let mixed_5b = Mixed5b::new(ps, rng, &format!("{prefix}.mixed_5b"));
        let block35 = (0..10)
            .map(|i| ResidualBlock::block35(ps, rng, &format!("{prefix}.block35_{i}"), 0.17))
            .collect();
        let mixed_6a = Mixed6a::new(ps, rng, &format!("{prefix}.mixed_6a"));
        let block17 = (0..20)
            .map(|i| ResidualBlock::block17(ps, rng, &format!("{prefix}.block17_{i}"), 0.10))
            .collect();
        let mixed_7a = Mixed7a::new(ps, rng, &format!("{prefix}.mixed_7a"));
        let block8 = (0..10)
            .map(|i| {
                let last = i == 9;
                ResidualBlock::block8(
                    ps,
                    rng,
                    &format!("{prefix}.block8_{i}"),
                    if last { 1.0 } else { 0.20 },
                    !last,
                )
            })
            .collect();
        let conv_7b = cbr(ps, rng, &format!("{prefix}.conv_7b"), 2080, 1536, ConvCfg::same(1));
        InceptionResNetV2Encoder {
            stem1,
            stem2,
            stem3,
            stem4,
            stem5,
            mixed_5b,
            block35,
            mixed_6a,
            block17,
            mixed_7a,
            block8,
            conv_7b,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Taps<T> {
        let x = self.stem1.forward(g, ps, x);
        let x = self.stem2.forward(g, ps, &x);
        let tap1 = self.stem3.forward(g, ps, &x);
        let (x, _) = g.max_pool(&tap1, PoolCfg::new(3, 2, 1));
        let x = self.stem4.forward(g, ps, &x);
        let tap2 = self.stem5.forward(g, ps, &x);
        let (x, _) = g.max_pool(&tap2, PoolCfg::new(3, 2, 1));
        let mut x = self.mixed_5b.forward(g, ps, &x);
        for blk in &self.block35 {
            x = blk.forward(g, ps, &x);
        }
        let tap3 = x.clone();
        let mut x = self.mixed_6a.forward(g, ps, &x);
        for blk in &self.block17 {
            x = blk.forward(g, ps, &x);
        }
        let tap4 = x.clone();
        let mut x = self.mixed_7a.forward(g, ps, &x);
        for blk in &self.block8 {
            x = blk.forward(g, ps, &x);
        }
        let tap5 = self.conv_7b.forward(g, ps, &x);
        [tap1, tap2, tap3, tap4, tap5]
    }
}
