//! Eager autodiff tape.
//!
//! In training mode every op pushes its output (and a backward closure) onto
//! the tape; [`Graph::backward`] walks it in reverse and routes gradients to
//! parameters. In inference mode ops return plain tensors and nothing is
//! retained, so intermediate activations free as soon as they go out of
//! scope — this is what keeps full-resolution forward passes inside a small
//! memory budget.

use crate::ops::{conv, elementwise as ew, loss, norm, pool, resample};
use crate::{BufferId, ConvCfg, Grads, ParamId, ParamStore, PoolCfg, PoolIndices, Scalar, Tensor};

/// A tensor flowing through a [`Graph`]: either a tracked tape node or a
/// free-standing value (inference mode / constants).
#[derive(Clone)]
pub enum Value<T> {
    Eager(Tensor<T>),
    Node(usize),
}

type BackFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<(usize, Tensor<T>)>>;

struct Node<T> {
    value: Tensor<T>,
    backward: Option<BackFn<T>>,
    param: Option<ParamId>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    training: bool,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(training: bool) -> Self {
        Graph { training, nodes: Vec::new() }
    }

    pub fn inference() -> Self {
        Graph::new(false)
    }

    pub fn train() -> Self {
        Graph::new(true)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Materialize the tensor behind a value.
    pub fn tensor(&self, v: &Value<T>) -> Tensor<T> {
        match v {
            Value::Eager(t) => t.clone(),
            Value::Node(i) => self.nodes[*i].value.clone(),
        }
    }

    pub fn shape(&self, v: &Value<T>) -> [usize; 4] {
        match v {
            Value::Eager(t) => t.shape(),
            Value::Node(i) => self.nodes[*i].value.shape(),
        }
    }

    /// Scalar value of a `[1,1,1,1]` tensor (for logging / loss readout).
    pub fn scalar(&self, v: &Value<T>) -> f64 {
        self.tensor(v).item().to_f64_()
    }

    fn push(&mut self, value: Tensor<T>, backward: Option<BackFn<T>>, param: Option<ParamId>, needs_grad: bool) -> Value<T> {
        self.nodes.push(Node { value, backward, param, needs_grad });
        Value::Node(self.nodes.len() - 1)
    }

    /// Node id for an input, promoting eager tensors to constant leaves.
    fn node_of(&mut self, v: &Value<T>) -> usize {
        match v {
            Value::Node(i) => *i,
            Value::Eager(t) => {
                self.nodes.push(Node { value: t.clone(), backward: None, param: None, needs_grad: false });
                self.nodes.len() - 1
            }
        }
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    /// A leaf that never receives gradients (inputs, targets).
    pub fn constant(&mut self, t: Tensor<T>) -> Value<T> {
        if self.training {
            self.push(t, None, None, false)
        } else {
            Value::Eager(t)
        }
    }

    /// A parameter leaf; gradients are routed to it unless it is frozen.
    pub fn param(&mut self, ps: &ParamStore<T>, id: ParamId) -> Value<T> {
        let t = ps.param(id).clone();
        if self.training && ps.is_trainable(id) {
            self.push(t, None, Some(id), true)
        } else if self.training {
            self.push(t, None, None, false)
        } else {
            Value::Eager(t)
        }
    }

    pub fn conv2d(&mut self, x: &Value<T>, w: &Value<T>, b: Option<&Value<T>>, cfg: ConvCfg) -> Value<T> {
        let xt = self.tensor(x);
        let wt = self.tensor(w);
        let bt = b.map(|v| self.tensor(v));
        let y = conv::conv2d_fwd(&xt, &wt, bt.as_ref(), &cfg);
        if !self.training {
            return Value::Eager(y);
        }
        let xid = self.node_of(x);
        let wid = self.node_of(w);
        let bid = b.map(|v| self.node_of(v));
        let need_dx = self.needs(xid);
        let need_dw = self.needs(wid);
        let need_db = bid.map(|i| self.needs(i)).unwrap_or(false);
        let needs = need_dx || need_dw || need_db;
        let x_shape = xt.shape();
        let w_shape = wt.shape();
        let back: BackFn<T> = Box::new(move |dy| {
            let mut out = Vec::new();
            if need_dx {
                out.push((xid, conv::conv2d_bwd_input(dy, &wt, &cfg, x_shape)));
            }
            if need_dw || need_db {
                let (dw, db) = conv::conv2d_bwd_weight(dy, &xt, &cfg, w_shape, need_db);
                if need_dw {
                    out.push((wid, dw));
                }
                if let (true, Some(db), Some(bid)) = (need_db, db, bid) {
                    out.push((bid, db));
                }
            }
            out
        });
        self.push(y, Some(back), None, needs)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        ps: &mut ParamStore<T>,
        x: &Value<T>,
        gamma: ParamId,
        beta: ParamId,
        running_mean: BufferId,
        running_var: BufferId,
        eps: f64,
        momentum: f64,
    ) -> Value<T> {
        let xt = self.tensor(x);
        let gamma_t = ps.param(gamma).clone();
        let beta_t = ps.param(beta).clone();
        if !self.training {
            let y = norm::batch_norm_eval_fwd(
                &xt,
                &gamma_t,
                &beta_t,
                ps.buffer(running_mean),
                ps.buffer(running_var),
                eps,
            );
            return Value::Eager(y);
        }
        let (y, saved, var) = norm::batch_norm_train_fwd(&xt, &gamma_t, &beta_t, eps);
        // Exponential moving average of batch statistics; the variance is
        // stored unbiased, matching the usual deep-learning convention.
        let [n, _, h, w] = xt.shape();
        let count = (n * h * w) as f64;
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        let mut rm = ps.buffer(running_mean).clone();
        let mut rv = ps.buffer(running_var).clone();
        for (i, slot) in rm.data_mut().iter_mut().enumerate() {
            *slot = T::fromf((1.0 - momentum) * slot.to_f64_() + momentum * saved.mean[i]);
        }
        for (i, slot) in rv.data_mut().iter_mut().enumerate() {
            *slot = T::fromf((1.0 - momentum) * slot.to_f64_() + momentum * var[i] * unbias);
        }
        ps.set_buffer(running_mean, rm);
        ps.set_buffer(running_var, rv);

        let xid = self.node_of(x);
        // gamma/beta leaves created here so gradient routing works even
        // though callers pass ids, not Values.
        let gval = self.param_value_for(gamma, ps);
        let gid = self.node_of(&gval);
        let bval = self.param_value_for(beta, ps);
        let bid = self.node_of(&bval);
        let need_dx = self.needs(xid);
        let trainable = ps.is_trainable(gamma);
        let back: BackFn<T> = Box::new(move |dy| {
            let (dx, dgamma, dbeta) = norm::batch_norm_bwd(dy, &saved, &gamma_t);
            let mut out = Vec::new();
            if need_dx {
                out.push((xid, dx));
            }
            if trainable {
                out.push((gid, dgamma));
                out.push((bid, dbeta));
            }
            out
        });
        self.push(y, Some(back), None, need_dx || trainable)
    }

    fn param_value_for(&mut self, id: ParamId, ps: &ParamStore<T>) -> Value<T> {
        // Params referenced inside composite ops get their own leaf per use.
        let t = ps.param(id).clone();
        if ps.is_trainable(id) {
            self.push(t, None, Some(id), true)
        } else {
            self.push(t, None, None, false)
        }
    }

    pub fn relu(&mut self, x: &Value<T>) -> Value<T> {
        let y = ew::relu_fwd(&self.tensor(x));
        if !self.training {
            return Value::Eager(y);
        }
        let xid = self.node_of(x);
        let needs = self.needs(xid);
        let y_saved = y.clone();
        let back: BackFn<T> = Box::new(move |dy| vec![(xid, ew::relu_bwd(dy, &y_saved))]);
        self.push(y, needs.then_some(back), None, needs)
    }

    pub fn sigmoid(&mut self, x: &Value<T>) -> Value<T> {
        let y = ew::sigmoid_fwd(&self.tensor(x));
        if !self.training {
            return Value::Eager(y);
        }
        let xid = self.node_of(x);
        let needs = self.needs(xid);
        let y_saved = y.clone();
        let back: BackFn<T> = Box::new(move |dy| vec![(xid, ew::sigmoid_bwd(dy, &y_saved))]);
        self.push(y, needs.then_some(back), None, needs)
    }

    /// Multiply by a compile-time constant (residual branch scaling).
    pub fn mul_const(&mut self, x: &Value<T>, factor: f64) -> Value<T> {
        let xt = self.tensor(x);
        let f = T::fromf(factor);
        let mut y = xt.clone();
        for v in y.data_mut() {
            *v = *v * f;
        }
        if !self.training {
            return Value::Eager(y);
        }
        let xid = self.node_of(x);
        let needs = self.needs(xid);
        let back: BackFn<T> = Box::new(move |dy| {
            let mut dx = dy.clone();
            for v in dx.data_mut() {
                *v = *v * f;
            }
            vec![(xid, dx)]
        });
        self.push(y, needs.then_some(back), None, needs)
    }

    pub fn add(&mut self, a: &Value<T>, b: &Value<T>) -> Value<T> {
        let y = ew::add_fwd(&self.tensor(a), &self.tensor(b));
        if !self.training {
            return Value::Eager(y);
        }
        let aid = self.node_of(a);
        let bid = self.node_of(b);
        let (na, nb) = (self.needs(aid), self.needs(bid));
        let back: BackFn<T> = Box::new(move |dy| {
            let mut out = Vec::new();
            if na {
                out.push((aid, dy.clone()));
            }
            if nb {
                out.push((bid, dy.clone()));
            }
            out
        });
        self.push(y, Some(back), None, na || nb)
    }

    pub fn concat_channels(&mut self, inputs: &[&Value<T>]) -> Value<T> {
        let tensors: Vec<Tensor<T>> = inputs.iter().map(|v| self.tensor(v)).collect();
        let refs: Vec<&Tensor<T>> = tensors.iter().collect();
        let y = ew::concat_channels_fwd(&refs);
        if !self.training {
            return Value::Eager(y);
        }
        let ids: Vec<usize> = inputs.iter().map(|v| self.node_of(v)).collect();
        let needs: Vec<bool> = ids.iter().map(|&i| self.needs(i)).collect();
        let any = needs.iter().any(|&b| b);
        let counts: Vec<usize> = tensors.iter().map(|t| t.c()).collect();
        let back: BackFn<T> = Box::new(move |dy| {
            let parts = ew::concat_channels_bwd(dy, &counts);
            ids.iter()
                .zip(parts)
                .zip(&needs)
                .filter(|(_, &n)| n)
                .map(|((id, g), _)| (*id, g))
                .collect()
        });
        self.push(y, Some(back), None, any)
    }

    pub fn scale_channels(&mut self, x: &Value<T>, gate: &Value<T>) -> Value<T> {
        let xt = self.tensor(x);
        let gt = self.tensor(gate);
        let y = ew::scale_channels_fwd(&xt, &gt);
        if !self.training {
            return Value::Eager(y);
        }
        let xid = self.node_of(x);
        let gid = self.node_of(gate);
        let (nx, ng) = (self.needs(xid), self.needs(gid));
        let back: BackFn<T> = Box::new(move |dy| {
            let (dx, dg) = ew::scale_channels_bwd(dy, &xt, &gt);
            let mut out = Vec::new();
            if nx {
                out.push((xid, dx));
            }
            if ng {
                out.push((gid, dg));
            }
            out
        });
        self.push(y, Some(back), None, nx || ng)
    }

    pub fn max_pool(&mut self, x: &Value<T>, cfg: PoolCfg) -> (Value<T>, PoolIndices) {
        let xt = self.tensor(x);
        let (y, idx) = pool::max_pool_fwd(&xt, &cfg);
        if !self.training {
            return (Value::Eager(y), idx);
        }
        let xid = self.node_of(x);
        let needs = self.needs(xid);
        let x_shape = xt.shape();
        let idx_b = idx.clone();
        let back: BackFn<T> = Box::new(move |dy| vec![(xid, pool::max_pool_bwd(dy, &idx_b, x_shape))]);
        (self.push(y, needs.then_some(back), None, needs), idx)
    }

    pub fn max_unpool(&mut self, x: &Value<T>, idx: &PoolIndices) -> Value<T> {
        let xt = self.tensor(x);
        let y = pool::max_unpool_fwd(&xt, idx);
        if !self.training {
            return Value::Eager(y);
        }
        let xid = self.node_of(x);
        let needs = self.needs(xid);
        let idx_b = idx.clone();
        let back: BackFn<T> = Box::new(move |dy| vec![(xid, pool::max_unpool_bwd(dy, &idx_b))]);
        self.push(y, needs.then_some(back), None, needs)
    }

    pub fn avg_pool(&mut self, x: &Value<T>, cfg: PoolCfg) -> Value<T> {
        let xt = self.tensor(x);
        let y = pool::avg_pool_fwd(&xt, &cfg);
        if !self.training {
            return Value::Eager(y);
        }
        let xid = self.node_of(x);
        let needs = self.needs(xid);
        let x_shape = xt.shape();
        let back: BackFn<T> = Box::new(move |dy| vec![(xid, pool::avg_pool_bwd(dy, &cfg, x_shape))]);
        self.push(y, needs.then_some(back), None, needs)
    }

    pub fn global_avg_pool(&mut self, x: &Value<T>) -> Value<T> {
        let xt = self.tensor(x);
        let y = pool::global_avg_pool_fwd(&xt);
        if !self.training {
            return Value::Eager(y);
        }
        let xid = self.node_of(x);
        let needs = self.needs(xid);
        let x_shape = xt.shape();
        let back: BackFn<T> = Box::new(move |dy| vec![(xid, pool::global_avg_pool_bwd(dy, x_shape))]);
        self.push(y, needs.then_some(back), None, needs)
    }

    pub fn upsample_nearest2(&mut self, x: &Value<T>) -> Value<T> {
        let xt = self.tensor(x);
        let y = resample::upsample_nearest2_fwd(&xt);
        if !self.training {
            return Value::Eager(y);
        }
        let xid = self.node_of(x);
        let needs = self.needs(xid);
        let x_shape = xt.shape();
        let back: BackFn<T> = Box::new(move |dy| vec![(xid, resample::upsample_nearest2_bwd(dy, x_shape))]);
        self.push(y, needs.then_some(back), None, needs)
    }

    /// Mean binary cross-entropy against a constant target.
    pub fn bce_loss(&mut self, pred: &Value<T>, target: &Tensor<T>) -> Value<T> {
        let pt = self.tensor(pred);
        let l = Tensor::scalar_value(T::fromf(loss::bce_fwd(&pt, target)));
        if !self.training {
            return Value::Eager(l);
        }
        let pid = self.node_of(pred);
        let needs = self.needs(pid);
        let target = target.clone();
        let back: BackFn<T> = Box::new(move |dy| {
            vec![(pid, loss::bce_bwd(&pt, &target, dy.item().to_f64_()))]
        });
        self.push(l, needs.then_some(back), None, needs)
    }

    /// Soft-Dice loss against a constant target.
    pub fn dice_loss(&mut self, pred: &Value<T>, target: &Tensor<T>) -> Value<T> {
        let pt = self.tensor(pred);
        let l = Tensor::scalar_value(T::fromf(loss::dice_loss_fwd(&pt, target)));
        if !self.training {
            return Value::Eager(l);
        }
        let pid = self.node_of(pred);
        let needs = self.needs(pid);
        let target = target.clone();
        let back: BackFn<T> = Box::new(move |dy| {
            vec![(pid, loss::dice_loss_bwd(&pt, &target, dy.item().to_f64_()))]
        });
        self.push(l, needs.then_some(back), None, needs)
    }

    /// Reverse pass from a scalar loss node; returns per-parameter gradients.
    pub fn backward(&mut self, loss: &Value<T>, ps: &ParamStore<T>) -> Grads<T> {
        let lid = match loss {
            Value::Node(i) => *i,
            Value::Eager(_) => panic!("backward requires a training-mode graph"),
        };
        assert_eq!(self.nodes[lid].value.numel(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[lid] = Some(Tensor::scalar_value(T::one()));
        let mut out = Grads::new(ps.num_params());
        for idx in (0..=lid).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if let Some(pid) = self.nodes[idx].param {
                match &mut out.by_param[pid.0] {
                    Some(t) => t.add_assign(&g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
            if let Some(f) = &self.nodes[idx].backward {
                for (pidx, contrib) in f(&g) {
                    debug_assert!(pidx < idx, "backward edge must point earlier in the tape");
                    match &mut grads[pidx] {
                        Some(t) => t.add_assign(&contrib),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
        }
        out
    }
}
