use std::collections::HashMap;

use crate::{Scalar, Tensor};

/// Handle to a trainable parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Handle to a non-trainable buffer (e.g. batch-norm running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone)]
struct ParamEntry<T> {
    name: String,
    value: Tensor<T>,
    trainable: bool,
}

#[derive(Clone)]
struct BufferEntry<T> {
    name: String,
    value: Tensor<T>,
}

/// Owns every parameter and buffer of a model. Cloning is cheap (tensors
/// share storage), which lets evaluation workers hold their own handle.
/// Parameters are registered in
/// a fixed order at build time, which also fixes the RNG draw order and the
/// checkpoint layout.
#[derive(Clone)]
pub struct ParamStore<T> {
    params: Vec<ParamEntry<T>>,
    buffers: Vec<BufferEntry<T>>,
    names: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), buffers: Vec::new(), names: HashMap::new() }
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.names.insert(name.clone(), self.params.len()).is_none(),
            "duplicate parameter name: {name}"
        );
        self.params.push(ParamEntry { name, value, trainable });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> BufferId {
        let name = name.into();
        self.buffers.push(BufferEntry { name, value });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn param_name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_param(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(self.params[id.0].value.shape(), value.shape(), "param shape change");
        self.params[id.0].value = value;
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].value
    }

    pub fn set_buffer(&mut self, id: BufferId, value: Tensor<T>) {
        assert_eq!(self.buffers[id.0].value.shape(), value.shape(), "buffer shape change");
        self.buffers[id.0].value = value;
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_buffers(&self) -> usize {
        self.buffers.len()
    }

    /// Total number of scalar elements across all parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Mark every parameter whose name starts with `prefix` as frozen.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = false;
            }
        }
    }

    pub fn iter_params(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p.name.as_str(), &p.value))
    }

    pub fn iter_buffers(&self) -> impl Iterator<Item = (BufferId, &str, &Tensor<T>)> {
        self.buffers.iter().enumerate().map(|(i, b)| (BufferId(i), b.name.as_str(), &b.value))
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).map(|&i| ParamId(i))
    }

    pub fn find_buffer(&self, name: &str) -> Option<BufferId> {
        self.buffers.iter().position(|b| b.name == name).map(BufferId)
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-parameter gradients produced by [`crate::Graph::backward`].
pub struct Grads<T> {
    pub(crate) by_param: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub(crate) fn new(n: usize) -> Self {
        Grads { by_param: (0..n).map(|_| None).collect() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn is_all_finite(&self) -> bool {
        self.by_param.iter().flatten().all(|g| g.is_all_finite())
    }

    /// Global L2 norm over all gradients (f64 accumulation).
    pub fn l2_norm(&self) -> f64 {
        self.by_param
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|v| {
                let x = v.to_f64_();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Scale every gradient in place (used for gradient clipping).
    pub fn scale(&mut self, factor: f64) {
        let f = T::fromf(factor);
        for g in self.by_param.iter_mut().flatten() {
            for v in g.data_mut() {
                *v = *v * f;
            }
        }
    }
}
