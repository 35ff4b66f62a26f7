//! Neural-network building blocks with explicit forward/backward passes.
//!
//! Layers are plain parameter structs plus free functions; every forward
//! returns whatever cache its backward needs. There is no tape — the
//! network topology is static and its backward is written out by hand in
//! [`crate::model`] and [`crate::dmc`], which keeps the arithmetic
//! auditable against the finite-difference oracles.

pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod ops;

pub use conv::{conv2d_backward, conv2d_forward, conv2d_output_size, ConvGrads, ConvLayer};
pub use linear::{linear_backward, linear_forward, LinearGrads, LinearLayer};
pub use loss::softmax_cross_entropy;
pub use norm::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, lrn_backward,
    lrn_forward, BatchNorm2d, BnCache, LrnCache, LrnParams,
};
pub use ops::{
    dropout_forward, maxpool_backward, maxpool_eval, maxpool_forward, relu_backward,
    relu_forward, sigmoid_backward, sigmoid_forward, PoolDef,
};

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

/// Named gradient accumulator. Keys are the parameter paths produced by
/// the model's parameter visitor, so the optimizer and the checkpoint
/// container share one name space.
#[derive(Debug, Clone)]
pub struct GradStore<S> {
    map: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> GradStore<S> {
    pub fn new() -> Self {
        GradStore {
            map: BTreeMap::new(),
        }
    }

    pub fn accum(&mut self, path: &str, grad: Tensor<S>) {
        match self.map.get_mut(path) {
            Some(g) => g.add_assign(&grad),
            None => {
                self.map.insert(path.to_string(), grad);
            }
        }
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<S>> {
        self.map.get(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn merge(&mut self, other: GradStore<S>) {
        for (k, v) in other.map {
            self.accum(&k, v);
        }
    }

    pub fn scale(&mut self, factor: S) {
        for g in self.map.values_mut() {
            g.scale(factor);
        }
    }
}

impl<S: Scalar> Default for GradStore<S> {
    fn default() -> Self {
        Self::new()
    }
}
