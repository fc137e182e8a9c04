//! Adam optimizer.

use crate::{Grads, ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates, exposed so checkpoints can persist them.
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Option<Tensor<T>>>,
    pub v: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState { step: 0, m: Vec::new(), v: Vec::new() }
    }

    fn ensure(&mut self, n: usize) {
        while self.m.len() < n {
            self.m.push(None);
            self.v.push(None);
        }
    }
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, state: AdamState::new() }
    }

    /// One update over every trainable parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>) {
        self.state.ensure(store.num_params());
        self.state.step += 1;
        let t = self.state.step;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);

        // Per-element math stays in T (f32 in production); the scalar
        // bias-correction constants are precomputed in f64.
        let b1_t = T::fromf(b1);
        let b2_t = T::fromf(b2);
        let one_minus_b1 = T::fromf(1.0 - b1);
        let one_minus_b2 = T::fromf(1.0 - b2);
        let lr_bc1 = T::fromf(self.cfg.lr / bc1);
        let inv_sqrt_bc2 = T::fromf(1.0 / bc2.sqrt());
        let eps = T::fromf(self.cfg.eps);

        for (i, grad) in grads.by_param.iter().enumerate() {
            let Some(g) = grad else { continue };
            let id = crate::ParamId(i);
            if !store.is_trainable(id) {
                continue;
            }
            let shape = store.param(id).shape();
            if self.state.m[i].is_none() {
                self.state.m[i] = Some(Tensor::zeros(shape));
                self.state.v[i] = Some(Tensor::zeros(shape));
            }
            let mut m = self.state.m[i].take().unwrap();
            let mut v = self.state.v[i].take().unwrap();
            let mut p = store.param(id).clone();
            {
                use rayon::prelude::*;
                const CHUNK: usize = 1 << 16;
                let md = m.data_mut();
                let vd = v.data_mut();
                let pd = p.data_mut();
                let gd = g.data();
                pd.par_chunks_mut(CHUNK)
                    .zip(md.par_chunks_mut(CHUNK))
                    .zip(vd.par_chunks_mut(CHUNK))
                    .zip(gd.par_chunks(CHUNK))
                    .for_each(|(((pc, mc), vc), gc)| {
                        for j in 0..pc.len() {
                            let gj = gc[j];
                            let mj = b1_t * mc[j] + one_minus_b1 * gj;
                            let vj = b2_t * vc[j] + one_minus_b2 * gj * gj;
                            mc[j] = mj;
                            vc[j] = vj;
                            // p -= (lr / bc1) * m / (sqrt(v) / sqrt(bc2) + eps)
                            pc[j] = pc[j] - lr_bc1 * mj / (vj.sqrt() * inv_sqrt_bc2 + eps);
                        }
                    });
            }
            store.set_param(id, p);
            self.state.m[i] = Some(m);
            self.state.v[i] = Some(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_matches_hand_computation() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add_param("w", Tensor::from_vec([1, 1, 1, 1], vec![1.0]), true);
        let mut adam = Adam::new(AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 });
        let mut grads = Grads::new(1);
        grads.by_param[0] = Some(Tensor::from_vec([1, 1, 1, 1], vec![0.5]));
        adam.step(&mut store, &grads);
        // m = 0.05, v = 0.00025; mhat = 0.5, vhat = 0.25;
        // step = 0.1 * 0.5 / (0.5 + eps) ~= 0.1
        let w = store.param(id).item();
        assert!((w - 0.9).abs() < 1e-7, "got {w}");
    }

    #[test]
    fn frozen_params_are_not_updated() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add_param("w", Tensor::from_vec([1, 1, 1, 1], vec![1.0]), false);
        let mut adam = Adam::new(AdamConfig::default());
        let mut grads = Grads::new(1);
        grads.by_param[0] = Some(Tensor::from_vec([1, 1, 1, 1], vec![0.5]));
        adam.step(&mut store, &grads);
        assert_eq!(store.param(id).item(), 1.0);
    }
}
