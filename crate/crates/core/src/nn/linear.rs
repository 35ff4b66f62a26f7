//! Fully connected layer.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LinearLayer<S> {
    /// `[out_features, in_features]`
    pub weight: Tensor<S>,
    /// `[out_features]`
    pub bias: Tensor<S>,
}

impl<S: Scalar> LinearLayer<S> {
    pub fn new(out_features: usize, in_features: usize) -> Self {
        LinearLayer {
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
        }
    }

    pub fn out_features(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn in_features(&self) -> usize {
        self.weight.dim(1)
    }
}

/// `y = x W^T + b` over a `[N, in]` batch.
pub fn linear_forward<S: Scalar>(layer: &LinearLayer<S>, x: &Tensor<S>) -> Tensor<S> {
    assert_eq!(x.ndim(), 2, "linear expects [N, in]");
    let (n, d_in) = (x.dim(0), x.dim(1));
    assert_eq!(d_in, layer.in_features(), "linear input width mismatch");
    let d_out = layer.out_features();
    let mut y = Tensor::zeros(&[n, d_out]);
    S::gemm(
        n,
        d_in,
        d_out,
        S::one(),
        x.data(),
        d_in as isize,
        1,
        layer.weight.data(),
        1,
        d_in as isize,
        S::zero(),
        y.data_mut(),
        d_out as isize,
        1,
    );
    for i in 0..n {
        for (j, v) in y.batch_item_mut(i).iter_mut().enumerate() {
            *v += layer.bias.data()[j];
        }
    }
    y
}

#[derive(Debug)]
pub struct LinearGrads<S> {
    pub dx: Tensor<S>,
    pub dw: Tensor<S>,
    pub db: Tensor<S>,
}

pub fn linear_backward<S: Scalar>(
    layer: &LinearLayer<S>,
    x: &Tensor<S>,
    dy: &Tensor<S>,
) -> LinearGrads<S> {
    let (n, d_in) = (x.dim(0), x.dim(1));
    let d_out = layer.out_features();
    let mut dx = Tensor::zeros(&[n, d_in]);
    let mut dw = Tensor::zeros(&[d_out, d_in]);
    let mut db = Tensor::zeros(&[d_out]);
    // dx = dY * W
    S::gemm(
        n,
        d_out,
        d_in,
        S::one(),
        dy.data(),
        d_out as isize,
        1,
        layer.weight.data(),
        d_in as isize,
        1,
        S::zero(),
        dx.data_mut(),
        d_in as isize,
        1,
    );
    // dW = dY^T * x
    S::gemm(
        d_out,
        n,
        d_in,
        S::one(),
        dy.data(),
        1,
        d_out as isize,
        x.data(),
        d_in as isize,
        1,
        S::zero(),
        dw.data_mut(),
        d_in as isize,
        1,
    );
    for i in 0..n {
        for (j, &v) in dy.batch_item(i).iter().enumerate() {
            db.data_mut()[j] += v;
        }
    }
    LinearGrads { dx, dw, db }
}
