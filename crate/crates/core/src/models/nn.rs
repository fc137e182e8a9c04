//! Shared network building blocks: convolution + batch-norm layers and the
//! squeeze-and-excitation gate. Blocks hold parameter handles only; tensors
//! live in the model's [`ParamStore`].

use polypseg_tensor::{BufferId, ConvCfg, Graph, InitRng, ParamId, ParamStore, Scalar, Tensor, Value};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub cfg: ConvCfg,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        rng: &mut InitRng,
        name: &str,
        c_in: usize,
        c_out: usize,
        cfg: ConvCfg,
        bias: bool,
    ) -> Self {
        let fan_in = (c_in / cfg.groups) * cfg.kh * cfg.kw;
        let w = ps.add_param(
            format!("{name}.weight"),
            rng.kaiming_uniform([c_out, c_in / cfg.groups, cfg.kh, cfg.kw], fan_in),
            true,
        );
        let b = bias.then(|| ps.add_param(format!("{name}.bias"), Tensor::zeros([1, c_out, 1, 1]), true));
        Conv2d { w, b, cfg }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: &Value<T>) -> Value<T> {
        let w = g.param(ps, self.w);
        let b = self.b.map(|id| g.param(ps, id));
        g.conv2d(x, &w, b.as_ref(), self.cfg)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        BatchNorm2d {
            gamma: ps.add_param(format!("{name}.gamma"), Tensor::filled([1, c, 1, 1], T::one()), true),
            beta: ps.add_param(format!("{name}.beta"), Tensor::zeros([1, c, 1, 1]), true),
            running_mean: ps.add_buffer(format!("{name}.running_mean"), Tensor::zeros([1, c, 1, 1])),
            running_var: ps.add_buffer(format!("{name}.running_var"), Tensor::filled([1, c, 1, 1], T::one())),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        g.batch_norm(ps, x, self.gamma, self.beta, self.running_mean, self.running_var, BN_EPS, BN_MOMENTUM)
    }
}

/// conv -> batch norm -> optional ReLU (the standard encoder unit).
#[derive(Debug, Clone)]
pub(crate) struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub relu: bool,
}

impl ConvBn {
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        rng: &mut InitRng,
        name: &str,
        c_in: usize,
        c_out: usize,
        cfg: ConvCfg,
        relu: bool,
    ) -> Self {
        ConvBn {
            conv: Conv2d::new(ps, rng, &format!("{name}.conv"), c_in, c_out, cfg, false),
            bn: BatchNorm2d::new(ps, &format!("{name}.bn"), c_out),
            relu,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &mut ParamStore<T>, x: &Value<T>) -> Value<T> {
        let x = self.conv.forward(g, ps, x);
        let x = self.bn.forward(g, ps, &x);
        if self.relu {
            g.relu(&x)
        } else {
            x
        }
    }
}

/// Squeeze-and-excitation: global pool -> 1x1 reduce -> ReLU -> 1x1 expand
/// -> sigmoid -> channel-wise rescale.
#[derive(Debug, Clone)]
pub(crate) struct SeBlock {
    fc1: Conv2d,
    fc2: Conv2d,
}

impl SeBlock {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, rng: &mut InitRng, name: &str, c: usize, reduction: usize) -> Self {
        let mid = (c / reduction).max(1);
        SeBlock {
            fc1: Conv2d::new(ps, rng, &format!("{name}.fc1"), c, mid, ConvCfg::same(1), true),
            fc2: Conv2d::new(ps, rng, &format!("{name}.fc2"), mid, c, ConvCfg::same(1), true),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: &Value<T>) -> Value<T> {
        let pooled = g.global_avg_pool(x);
        let s = self.fc1.forward(g, ps, &pooled);
        let s = g.relu(&s);
        let s = self.fc2.forward(g, ps, &s);
        let gate = g.sigmoid(&s);
        g.scale_channels(x, &gate)
    }
}

/// Five encoder taps at output strides 2, 4, 8, 16, 32 (shallow to deep).
pub(crate) type Taps<T> = [Value<T>; 5];
