//! Inception-v3 encoder with padding-preserving stem and grid-reduction
//! blocks, so every stage lands exactly on output strides 2/4/8/16/32 and
//! skip connections align. Channel widths per stage match the canonical
//! model: 64, 192, 288, 768, 2048.

use polypseg_tensor::{ConvCfg, Graph, InitRng, ParamStore, PoolCfg, Scalar, Value};

use super::nn::{ConvBn, Taps};

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

/// 35x35-grid block: 1x1, 5x5, double-3x3 and pooled branches.
#[derive(Debug, Clone)]
struct InceptionA {
    b1x1: ConvBn,
    b5x5_1: ConvBn,
    b5x5_2: ConvBn,
    b3x3_1: ConvBn,
    b3x3_2: ConvBn,
    b3x3_3: ConvBn,
    pool_proj: ConvBn,
}

impl InceptionA {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, c_in: usize, pool_features: usize) -> Self {
        InceptionA {
            b1x1: cbr(ps, rng, &format!("{name}.b1x1"), c_in, 64, ConvCfg::same(1)),
            b5x5_1: cbr(ps, rng, &format!("{name}.b5x5_1"), c_in, 48, ConvCfg::same(1)),
            b5x5_2: cbr(ps, rng, &format!("{name}.b5x5_2"), 48, 64, ConvCfg::same(5)),
            b3x3_1: cbr(ps, rng, &format!("{name}.b3x3_1"), c_in, 64, ConvCfg::same(1)),
            b3x3_2: cbr(ps, rng, &format!("{name}.b3x3_2"), 64, 96, ConvCfg::same(3)),
            b3x3_3: cbr(ps, rng, &format!("{name}.b3x3_3"), 96, 96, ConvCfg::same(3)),
            pool_proj: cbr(ps, rng, &format!("{name}.pool_proj"), c_in, pool_features, ConvCfg::same(1)),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let a = self.b1x1.forward(g, ps, x);
        let b = self.b5x5_1.forward(g, ps, x);
        let b = self.b5x5_2.forward(g, ps, &b);
        let c = self.b3x3_1.forward(g, ps, x);
        let c = self.b3x3_2.forward(g, ps, &c);
        let c = self.b3x3_3.forward(g, ps, &c);
        let p = g.avg_pool(x, PoolCfg::new(3, 1, 1));
        let p = self.pool_proj.forward(g, ps, &p);
        g.concat_channels(&[&a, &b, &c, &p])
    }
}

/// Stride-2 grid reduction from the 35-grid to the 17-grid.
#[derive(Debug, Clone)]
struct ReductionA {
    b3x3: ConvBn,
    bdbl_1: ConvBn,
    bdbl_2: ConvBn,
    bdbl_3: ConvBn,
}

impl ReductionA {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, c_in: usize) -> Self {
        ReductionA {
            b3x3: cbr(ps, rng, &format!("{name}.b3x3"), c_in, 384, ConvCfg::same(3).with_stride(2)),
            bdbl_1: cbr(ps, rng, &format!("{name}.bdbl_1"), c_in, 64, ConvCfg::same(1)),
            bdbl_2: cbr(ps, rng, &format!("{name}.bdbl_2"), 64, 96, ConvCfg::same(3)),
            bdbl_3: cbr(ps, rng, &format!("{name}.bdbl_3"), 96, 96, ConvCfg::same(3).with_stride(2)),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let a = self.b3x3.forward(g, ps, x);
        let b = self.bdbl_1.forward(g, ps, x);
        let b = self.bdbl_2.forward(g, ps, &b);
        let b = self.bdbl_3.forward(g, ps, &b);
        let (p, _) = g.max_pool(x, PoolCfg::new(3, 2, 1));
        g.concat_channels(&[&a, &b, &p])
    }
}

/// 17x17-grid block with factorized 7x7 convolutions.
#[derive(Debug, Clone)]
struct InceptionB {
    b1x1: ConvBn,
    b7_1: ConvBn,
    b7_2: ConvBn,
    b7_3: ConvBn,
    bd_1: ConvBn,
    bd_2: ConvBn,
    bd_3: ConvBn,
    bd_4: ConvBn,
    bd_5: ConvBn,
    pool_proj: ConvBn,
}

impl InceptionB {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, c_in: usize, c7: usize) -> Self {
        InceptionB {
            b1x1: cbr(ps, rng, &format!("{name}.b1x1"), c_in, 192, ConvCfg::same(1)),
            b7_1: cbr(ps, rng, &format!("{name}.b7_1"), c_in, c7, ConvCfg::same(1)),
            b7_2: cbr(ps, rng, &format!("{name}.b7_2"), c7, c7, ConvCfg::rect(1, 7)),
            b7_3: cbr(ps, rng, &format!("{name}.b7_3"), c7, 192, ConvCfg::rect(7, 1)),
            bd_1: cbr(ps, rng, &format!("{name}.bd_1"), c_in, c7, ConvCfg::same(1)),
            bd_2: cbr(ps, rng, &format!("{name}.bd_2"), c7, c7, ConvCfg::rect(7, 1)),
            bd_3: cbr(ps, rng, &format!("{name}.bd_3"), c7, c7, ConvCfg::rect(1, 7)),
            bd_4: cbr(ps, rng, &format!("{name}.bd_4"), c7, c7, ConvCfg::rect(7, 1)),
            bd_5: cbr(ps, rng, &format!("{name}.bd_5"), c7, 192, ConvCfg::rect(1, 7)),
            pool_proj: cbr(ps, rng, &format!("{name}.pool_proj"), c_in, 192, ConvCfg::same(1)),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let a = self.b1x1.forward(g, ps, x);
        let b = self.b7_1.forward(g, ps, x);
        let b = self.b7_2.forward(g, ps, &b);
        let b = self.b7_3.forward(g, ps, &b);
        let c = self.bd_1.forward(g, ps, x);
        let c = self.bd_2.forward(g, ps, &c);
        let c = self.bd_3.forward(g, ps, &c);
        let c = self.bd_4.forward(g, ps, &c);
        let c = self.bd_5.forward(g, ps, &c);
        let p = g.avg_pool(x, PoolCfg::new(3, 1, 1));
        let p = self.pool_proj.forward(g, ps, &p);
        g.concat_channels(&[&a, &b, &c, &p])
    }
}

/// Stride-2 grid reduction from the 17-grid to the 8-grid.
#[derive(Debug, Clone)]
struct ReductionB {
    b3_1: ConvBn,
    b3_2: ConvBn,
    b7_1: ConvBn,
    b7_2: ConvBn,
    b7_3: ConvBn,
    b7_4: ConvBn,
}

impl ReductionB {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, c_in: usize) -> Self {
        ReductionB {
            b3_1: cbr(ps, rng, &format!("{name}.b3_1"), c_in, 192, ConvCfg::same(1)),
            b3_2: cbr(ps, rng, &format!("{name}.b3_2"), 192, 320, ConvCfg::same(3).with_stride(2)),
            b7_1: cbr(ps, rng, &format!("{name}.b7_1"), c_in, 192, ConvCfg::same(1)),
            b7_2: cbr(ps, rng, &format!("{name}.b7_2"), 192, 192, ConvCfg::rect(1, 7)),
            b7_3: cbr(ps, rng, &format!("{name}.b7_3"), 192, 192, ConvCfg::rect(7, 1)),
            b7_4: cbr(ps, rng, &format!("{name}.b7_4"), 192, 192, ConvCfg::same(3).with_stride(2)),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let a = self.b3_1.forward(g, ps, x);
        let a = self.b3_2.forward(g, ps, &a);
        let b = self.b7_1.forward(g, ps, x);
        let b = self.b7_2.forward(g, ps, &b);
        let b = self.b7_3.forward(g, ps, &b);
        let b = self.b7_4.forward(g, ps, &b);
        let (p, _) = g.max_pool(x, PoolCfg::new(3, 2, 1));
        g.concat_channels(&[&a, &b, &p])
    }
}

/// 8x8-grid block with split 3x1 / 1x3 branches.
#[derive(Debug, Clone)]
struct InceptionC {
    b1x1: ConvBn,
    b3_0: ConvBn,
    b3_a: ConvBn,
    b3_b: ConvBn,
    bd_0: ConvBn,
    bd_1: ConvBn,
    bd_a: ConvBn,
    bd_b: ConvBn,
    pool_proj: ConvBn,
}

impl InceptionC {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, c_in: usize) -> Self {
        InceptionC {
            b1x1: cbr(ps, rng, &format!("{name}.b1x1"), c_in, 320, ConvCfg::same(1)),
            b3_0: cbr(ps, rng, &format!("{name}.b3_0"), c_in, 384, ConvCfg::same(1)),
            b3_a: cbr(ps, rng, &format!("{name}.b3_a"), 384, 384, ConvCfg::rect(1, 3)),
            b3_b: cbr(ps, rng, &format!("{name}.b3_b"), 384, 384, ConvCfg::rect(3, 1)),
            bd_0: cbr(ps, rng, &format!("{name}.bd_0"), c_in, 448, ConvCfg::same(1)),
            bd_1: cbr(ps, rng, &format!("{name}.bd_1"), 448, 384, ConvCfg::same(3)),
            bd_a: cbr(ps, rng, &format!("{name}.bd_a"), 384, 384, ConvCfg::rect(1, 3)),
            bd_b: cbr(ps, rng, &format!("{name}.bd_b"), 384, 384, ConvCfg::rect(3, 1)),
            pool_proj: cbr(ps, rng, &format!("{name}.pool_proj"), c_in, 192, ConvCfg::same(1)),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let a = self.b1x1.forward(g, ps, x);
        let b0 = self.b3_0.forward(g, ps, x);
        let ba = self.b3_a.forward(g, ps, &b0);
        let bb = self.b3_b.forward(g, ps, &b0);
        let c0 = self.bd_0.forward(g, ps, x);
        let c1 = self.bd_1.forward(g, ps, &c0);
        let ca = self.bd_a.forward(g, ps, &c1);
        let cb = self.bd_b.forward(g, ps, &c1);
        let p = g.avg_pool(x, PoolCfg::new(3, 1, 1));
        let p = self.pool_proj.forward(g, ps, &p);
        g.concat_channels(&[&a, &ba, &bb, &ca, &cb, &p])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct InceptionV3Encoder {
    stem1: ConvBn,
    stem2: ConvBn,
    stem3: ConvBn,
    stem4: ConvBn,
    stem5: ConvBn,
    mixed_a: Vec<InceptionA>,
    reduction_a: ReductionA,
    mixed_b: Vec<InceptionB>,
    reduction_b: ReductionB,
    mixed_c: Vec<InceptionC>,
}

pub(crate) const INCEPTION_V3_TAPS: [usize; 5] = [64, 192, 288, 768, 2048];

impl InceptionV3Encoder {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, prefix: &str) -> Self {
        let stem1 = cbr(ps, rng, &format!("{prefix}.stem1"), 3, 32, ConvCfg::same(3).with_stride(2));
        let stem2 = cbr(ps, rng, &format!("{prefix}.stem2"), 32, 32, ConvCfg::same(3));
        let stem3 = cbr(ps, rng, &format!("{prefix}.stem3"), 32, 64, ConvCfg::same(3));
        let stem4 = cbr(ps, rng, &format!("{prefix}.stem4"), 64, 80, ConvCfg::same(1));
        let stem5 = cbr(ps, rng, &format!("{prefix}.stem5"), 80, 192, ConvCfg::same(3));
        let mixed_a = vec![
            InceptionA::new(ps, rng, &format!("{prefix}.mixed_a0"), 192, 32),
            InceptionA::new(ps, rng, &format!("{prefix}.mixed_a1"), 256, 64),
            InceptionA::new(ps, rng, &format!("{prefix}.mixed_a2"), 288, 64),
        ];
        let reduction_a = ReductionA::new(ps, rng, &format!("{prefix}.reduction_a"), 288);
        let mixed_b = vec![
            InceptionB::new(ps, rng, &format!("{prefix}.mixed_b0"), 768, 128),
            InceptionB::new(ps, rng, &format!("{prefix}.mixed_b1"), 768, 160),
            InceptionB::new(ps, rng, &format!("{prefix}.mixed_b2"), 768, 160),
            InceptionB::new(ps, rng, &format!("{prefix}.mixed_b3"), 768, 192),
        ];
        let reduction_b = ReductionB::new(ps, rng, &format!("{prefix}.reduction_b"), 768);
        let mixed_c = vec![
            InceptionC::new(ps, rng, &format!("{prefix}.mixed_c0"), 1280),
            InceptionC::new(ps, rng, &format!("{prefix}.mixed_c1"), 2048),
        ];
        InceptionV3Encoder {
            stem1,
            stem2,
            stem3,
            stem4,
            stem5,
            mixed_a,
            reduction_a,
            mixed_b,
            reduction_b,
            mixed_c,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Taps<T> {
        let x = self.stem1.forward(g, ps, x);
        let x = self.stem2.forward(g, ps, &x);
        let tap1 = self.stem3.forward(g, ps, &x);
        let (x, _) = g.max_pool(&tap1, PoolCfg::new(3, 2, 1));
        let x = self.stem4.forward(g, ps, &x);
        let tap2 = self.stem5.forward(g, ps, &x);
        let (mut x, _) = g.max_pool(&tap2, PoolCfg::new(3, 2, 1));
        for blk in &self.mixed_a {
            x = blk.forward(g, ps, &x);
        }
        let tap3 = x.clone();
        let mut x = self.reduction_a.forward(g, ps, &x);
        for blk in &self.mixed_b {
            x = blk.forward(g, ps, &x);
        }
        let tap4 = x.clone();
        let mut x = self.reduction_b.forward(g, ps, &x);
        for blk in &self.mixed_c {
            x = blk.forward(g, ps, &x);
        }
        [tap1, tap2, tap3, tap4, x]
    }
}
