//! Densely connected encoders (DenseNet-121/169/201, growth rate 32).
//! Each dense layer's output is concatenated onto the running feature map;
//! transitions halve channels and pool. Taps are the dense-block outputs
//! before their transition.

use polypseg_tensor::{ConvCfg, Graph, InitRng, ParamStore, PoolCfg, Scalar, Value};

use super::nn::{BatchNorm2d, Conv2d, ConvBn, Taps};

const GROWTH: usize = 32;
const BN_SIZE: usize = 4;
const STEM_CHANNELS: usize = 64;

#[derive(Debug, Clone, Copy)]
pub(crate) struct DenseNetConfig {
    pub block_layers: [usize; 4],
}

impl DenseNetConfig {
    pub fn densenet121() -> Self {
        DenseNetConfig { block_layers: [6, 12, 24, 16] }
    }
    pub fn densenet169() -> Self {
        DenseNetConfig { block_layers: [6, 12, 32, 32] }
    }
    pub fn densenet201() -> Self {
        DenseNetConfig { block_layers: [6, 12, 48, 32] }
    }

    pub fn tap_channels(&self) -> [usize; 5] {
        let mut c = STEM_CHANNELS;
        let mut taps = [STEM_CHANNELS, 0, 0, 0, 0];
        for (i, &n) in self.block_layers.iter().enumerate() {
            c += n * GROWTH;
            taps[i + 1] = c;
            if i + 1 != self.block_layers.len() {
                c /= 2; // transition
            }
        }
        taps
    }
}

/// BN -> ReLU -> 1x1 (bottleneck) -> BN -> ReLU -> 3x3 (growth), appended to
/// the input by concatenation.
#[derive(Debug, Clone)]
struct DenseLayer {
    bn1: BatchNorm2d,
    conv1: Conv2d,
    bn2: BatchNorm2d,
    conv2: Conv2d,
}

impl DenseLayer {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, c_in: usize) -> Self {
        let mid = BN_SIZE * GROWTH;
        DenseLayer {
            bn1: BatchNorm2d::new(ps, &format!("{name}.bn1"), c_in),
            conv1: Conv2d::new(ps, rng, &format!("{name}.conv1"), c_in, mid, ConvCfg::same(1), false),
            bn2: BatchNorm2d::new(ps, &format!("{name}.bn2"), mid),
            conv2: Conv2d::new(ps, rng, &format!("{name}.conv2"), mid, GROWTH, ConvCfg::same(3), false),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let y = self.bn1.forward(g, ps, x);
        let y = g.relu(&y);
        let y = self.conv1.forward(g, ps, &y);
        let y = self.bn2.forward(g, ps, &y);
        let y = g.relu(&y);
        let y = self.conv2.forward(g, ps, &y);
        g.concat_channels(&[x, &y])
    }
}

/// BN -> ReLU -> 1x1 halving conv -> 2x2 average pool.
#[derive(Debug, Clone)]
struct Transition {
    bn: BatchNorm2d,
    conv: Conv2d,
}

impl Transition {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, c_in: usize) -> Self {
        Transition {
            bn: BatchNorm2d::new(ps, &format!("{name}.bn"), c_in),
            conv: Conv2d::new(ps, rng, &format!("{name}.conv"), c_in, c_in / 2, ConvCfg::same(1), false),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let y = self.bn.forward(g, ps, x);
        let y = g.relu(&y);
        let y = self.conv.forward(g, ps, &y);
        g.avg_pool(&y, PoolCfg::new(2, 2, 0))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DenseNetEncoder {
    stem: ConvBn,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    final_bn: BatchNorm2d,
}

impl DenseNetEncoder {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, prefix: &str, cfg: &DenseNetConfig) -> Self {
        let stem = ConvBn::new(
            ps,
            rng,
            &format!("{prefix}.stem"),
            3,
            STEM_CHANNELS,
            ConvCfg { kh: 7, kw: 7, stride: 2, ph: 3, pw: 3, groups: 1 },
            true,
        );
        let mut c = STEM_CHANNELS;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (bi, &n_layers) in cfg.block_layers.iter().enumerate() {
            let mut layers = Vec::with_capacity(n_layers);
            for li in 0..n_layers {
                layers.push(DenseLayer::new(ps, rng, &format!("{prefix}.block{}.layer{li}", bi + 1), c));
                c += GROWTH;
            }
            blocks.push(layers);
            if bi + 1 != cfg.block_layers.len() {
                transitions.push(Transition::new(ps, rng, &format!("{prefix}.transition{}", bi + 1), c));
                c /= 2;
            }
        }
        let final_bn = BatchNorm2d::new(ps, &format!("{prefix}.final_bn"), c);
        DenseNetEncoder { stem, blocks, transitions, final_bn }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Taps<T> {
        let tap1 = self.stem.forward(g, ps, x);
        let (mut x, _) = g.max_pool(&tap1, PoolCfg::new(3, 2, 1));
        let mut taps = Vec::with_capacity(4);
        for (bi, layers) in self.blocks.iter().enumerate() {
            for layer in layers {
                x = layer.forward(g, ps, &x);
            }
            if bi + 1 != self.blocks.len() {
                taps.push(x.clone());
                x = self.transitions[bi].forward(g, ps, &x);
            } else {
                let y = self.final_bn.forward(g, ps, &x);
                taps.push(g.relu(&y));
            }
        }
        let [t2, t3, t4, t5] = <[Value<T>; 4]>::try_from(taps).ok().unwrap();
        [tap1, t2, t3, t4, t5]
    }
}
