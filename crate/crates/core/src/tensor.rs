//! Dense row-major tensors.
//!
//! Deliberately minimal: contiguous storage, shape bookkeeping and the
//! handful of elementwise helpers the layers need. All layout-heavy work
//! (im2col, pooling windows, ...) lives next to the operations that need it.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); len],
        }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match buffer length {}",
            shape,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros_like(other: &Tensor<S>) -> Self {
        Tensor::zeros(other.shape())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Reinterpret the buffer under a new shape of identical volume.
    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape to {:?} changes volume",
            shape
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, factor: S) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<S>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, other: &Tensor<S>, factor: S) {
        assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += factor * *b;
        }
    }

    /// Elementwise product into a fresh tensor.
    pub fn hadamard(&self, other: &Tensor<S>) -> Tensor<S> {
        assert_eq!(self.shape, other.shape, "hadamard shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| a * b)
                .collect(),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// View of sample `n` of a batched `[N, ...]` tensor.
    pub fn batch_item(&self, n: usize) -> &[S] {
        let stride: usize = self.shape[1..].iter().product();
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn batch_item_mut(&mut self, n: usize) -> &mut [S] {
        let stride: usize = self.shape[1..].iter().product();
        &mut self.data[n * stride..(n + 1) * stride]
    }

    /// Stack equal-shaped tensors along a fresh leading axis.
    pub fn stack(items: &[Tensor<S>]) -> Tensor<S> {
        assert!(!items.is_empty(), "stack of zero tensors");
        let inner = items[0].shape.clone();
        let mut shape = Vec::with_capacity(inner.len() + 1);
        shape.push(items.len());
        shape.extend_from_slice(&inner);
        let mut data = Vec::with_capacity(items.len() * items[0].len());
        for item in items {
            assert_eq!(item.shape, inner, "stack shape mismatch");
            data.extend_from_slice(&item.data);
        }
        Tensor { shape, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_and_batch_item_round_trip() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[2, 2], vec![5.0f64, 6.0, 7.0, 8.0]);
        let s = Tensor::stack(&[a.clone(), b.clone()]);
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.batch_item(0), a.data());
        assert_eq!(s.batch_item(1), b.data());
    }

    #[test]
    #[should_panic(expected = "shape")]
    fn from_vec_rejects_bad_volume() {
        let _ = Tensor::from_vec(&[2, 3], vec![0.0f32; 5]);
    }
}
