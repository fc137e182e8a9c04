//! VGG16 encoder: plain 3x3 conv + ReLU stacks separated by 2x2 max pools
//! (no batch norm, biases on, per the canonical configuration D).

use polypseg_tensor::{ConvCfg, Graph, InitRng, ParamStore, PoolCfg, Scalar, Value};

use super::nn::{Conv2d, Taps};

pub(crate) const VGG16_TAPS: [usize; 5] = [128, 256, 512, 512, 512];
const VGG16_STAGES: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];

#[derive(Debug, Clone)]
pub(crate) struct VggEncoder {
    stages: Vec<Vec<Conv2d>>,
}

impl VggEncoder {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, prefix: &str) -> Self {
        let mut c_in = 3;
        let mut stages = Vec::with_capacity(5);
        for (si, widths) in VGG16_STAGES.iter().enumerate() {
            let mut convs = Vec::with_capacity(widths.len());
            for (ci, &c_out) in widths.iter().enumerate() {
                convs.push(Conv2d::new(
                    ps,
                    rng,
                    &format!("{prefix}.stage{}.conv{ci}", si + 1),
                    c_in,
                    c_out,
                    ConvCfg::same(3),
                    true,
                ));
                c_in = c_out;
            }
            stages.push(convs);
        }
        VggEncoder { stages }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Taps<T> {
        let mut x = x.clone();
        let mut taps = Vec::with_capacity(5);
        for (si, stage) in self.stages.iter().enumerate() {
            for conv in stage {
                x = conv.forward(g, ps, &x);
                x = g.relu(&x);
            }
            if si >= 1 {
                // stage outputs at strides 2..16 before their pool
                taps.push(x.clone());
            }
            let (pooled, _) = g.max_pool(&x, PoolCfg::new(2, 2, 0));
            x = pooled;
        }
        taps.push(x); // pool5 output at stride 32
        let [t1, t2, t3, t4, t5] = <[Value<T>; 5]>::try_from(taps).ok().unwrap();
        [t1, t2, t3, t4, t5]
    }
}
