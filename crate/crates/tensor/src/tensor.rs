use std::sync::Arc;

use crate::Scalar;

/// Dense 4-D tensor `[n, c, h, w]`, row-major, cheaply clonable (Arc data).
#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor { shape, data: Arc::new(vec![T::zero(); shape.iter().product()]) }
    }

    pub fn filled(shape: [usize; 4], v: T) -> Self {
        Tensor { shape, data: Arc::new(vec![v; shape.iter().product()]) }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "tensor data length does not match shape {shape:?}"
        );
        Tensor { shape, data: Arc::new(data) }
    }

    pub fn scalar_value(v: T) -> Self {
        Tensor::from_vec([1, 1, 1, 1], vec![v])
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable view; clones the buffer if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cc, hh, ww] = self.shape;
        self.data[((n * cc + c) * hh + h) * ww + w]
    }

    /// Elementwise a += b (shapes must match).
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        let dst = self.data_mut();
        for (d, s) in dst.iter_mut().zip(other.data.iter()) {
            *d = *d + *s;
        }
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(&self, shape: [usize; 4]) -> Tensor<T> {
        assert_eq!(self.numel(), shape.iter().product::<usize>(), "reshape element count");
        Tensor { shape, data: Arc::clone(&self.data) }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64_()).sum()
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert elementwise to another scalar type via f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_vec(self.shape, self.data.iter().map(|v| U::fromf(v.to_f64_())).collect())
    }
}

/// Argmax indices produced by max pooling: for every output element the flat
/// `h * w` offset of the winning input pixel within its `(n, c)` plane.
#[derive(Clone, Debug)]
pub struct PoolIndices {
    pub shape: [usize; 4],
    pub data: Arc<Vec<u32>>,
    /// Input plane size the indices refer to.
    pub in_hw: (usize, usize),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_indexing_is_row_major() {
        let t = Tensor::<f32>::from_vec([1, 2, 2, 3], (0..12).map(|i| i as f32).collect());
        assert_eq!(t.at(0, 0, 0, 0), 0.0);
        assert_eq!(t.at(0, 0, 1, 2), 5.0);
        assert_eq!(t.at(0, 1, 0, 0), 6.0);
        assert_eq!(t.at(0, 1, 1, 1), 10.0);
    }

    #[test]
    fn data_mut_does_not_alias_shared_buffers() {
        let a = Tensor::<f32>::zeros([1, 1, 2, 2]);
        let mut b = a.clone();
        b.data_mut()[0] = 5.0;
        assert_eq!(a.data()[0], 0.0);
        assert_eq!(b.data()[0], 5.0);
    }
}
