//! Elementwise activations, dropout and max pooling.

use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Backward through ReLU given the forward *output*.
pub fn relu_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    assert_eq!(y.shape(), dy.shape());
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= S::zero() {
            *d = S::zero();
        }
    }
    dx
}

/// Numerically stable logistic sigmoid, clamped into the open interval
/// (0, 1): extreme inputs would otherwise round to exactly 0 or 1 and
/// break the strict gate-range contract.
pub fn sigmoid_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let hi = S::one() - S::epsilon();
    let lo = S::min_positive_value();
    x.map(|v| {
        let y = if v >= S::zero() {
            S::one() / (S::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (S::one() + e)
        };
        y.max(lo).min(hi)
    })
}

/// Backward through sigmoid given the forward *output*.
pub fn sigmoid_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    assert_eq!(y.shape(), dy.shape());
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        *d = *d * v * (S::one() - v);
    }
    dx
}

/// Inverted dropout: kept activations are scaled by `1/(1-p)` so the
/// expected value is unchanged and inference needs no rescaling.
/// Returns `(y, mask)`; multiply an incoming gradient by `mask` for the
/// backward pass. `p = 0` yields the identity with an all-ones mask.
pub fn dropout_forward<S: Scalar>(x: &Tensor<S>, p: f64, rng: &mut Rng) -> (Tensor<S>, Tensor<S>) {
    assert!((0.0..1.0).contains(&p), "dropout rate must be in [0,1)");
    if p == 0.0 {
        return (x.clone(), Tensor::filled(x.shape(), S::one()));
    }
    let keep = S::cast(1.0 / (1.0 - p));
    let mut mask = Tensor::zeros_like(x);
    for m in mask.data_mut() {
        if rng.uniform() >= p {
            *m = keep;
        }
    }
    (x.hadamard(&mask), mask)
}

/// Max-pooling geometry (square window).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PoolDef {
    pub kernel: usize,
    pub stride: usize,
}

impl PoolDef {
    pub fn output_size(&self, n: usize) -> usize {
        assert!(n >= self.kernel, "pool window larger than input ({n} < {})", self.kernel);
        (n - self.kernel) / self.stride + 1
    }
}

/// Max pooling over `[N, C, H, W]`; returns the pooled tensor and the flat
/// argmax index (within each sample) for the backward scatter.
pub fn maxpool_forward<S: Scalar>(pool: PoolDef, x: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let oh = pool.output_size(h);
    let ow = pool.output_size(w);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    for i in 0..n {
        let xs = x.batch_item(i);
        let ys = y.batch_item_mut(i);
        let amax = &mut argmax[i * c * oh * ow..(i + 1) * c * oh * ow];
        for ch in 0..c {
            let plane = &xs[ch * h * w..(ch + 1) * h * w];
            for oy in 0..oh {
                let y0 = oy * pool.stride;
                for ox in 0..ow {
                    let x0 = ox * pool.stride;
                    // Branchless max scan per window row keeps the common
                    // path predictable; ties keep the first (row-major
                    // earliest) index.
                    let mut best = S::neg_infinity();
                    let mut best_idx = 0usize;
                    for ky in 0..pool.kernel {
                        let row0 = (y0 + ky) * w + x0;
                        let row = &plane[row0..row0 + pool.kernel];
                        for (kx, &v) in row.iter().enumerate() {
                            let better = v > best;
                            best = if better { v } else { best };
                            best_idx = if better { row0 + kx } else { best_idx };
                        }
                    }
                    ys[(ch * oh + oy) * ow + ox] = best;
                    amax[(ch * oh + oy) * ow + ox] = (ch * h * w + best_idx) as u32;
                }
            }
        }
    }
    (y, argmax)
}

/// Max pooling without argmax bookkeeping, for inference paths.
pub fn maxpool_eval<S: Scalar>(pool: PoolDef, x: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let oh = pool.output_size(h);
    let ow = pool.output_size(w);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    for i in 0..n {
        let xs = x.batch_item(i);
        let ys: &mut [S] = y.batch_item_mut(i);
        for ch in 0..c {
            let plane = &xs[ch * h * w..(ch + 1) * h * w];
            for oy in 0..oh {
                let y0 = oy * pool.stride;
                let out_row = &mut ys[(ch * oh + oy) * ow..(ch * oh + oy + 1) * ow];
                for ky in 0..pool.kernel {
                    let row = &plane[(y0 + ky) * w..(y0 + ky + 1) * w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let x0 = ox * pool.stride;
                        let mut m = row[x0];
                        for &v in &row[x0 + 1..x0 + pool.kernel] {
                            m = m.max(v);
                        }
                        *o = if ky == 0 { m } else { (*o).max(m) };
                    }
                }
            }
        }
    }
    y
}

pub fn maxpool_backward<S: Scalar>(
    x_shape: &[usize],
    argmax: &[u32],
    dy: &Tensor<S>,
) -> Tensor<S> {
    let mut dx = Tensor::zeros(x_shape);
    let n = x_shape[0];
    let per_out = dy.len() / n;
    for i in 0..n {
        let dys = dy.batch_item(i);
        let amax = &argmax[i * per_out..(i + 1) * per_out];
        let dxs = dx.batch_item_mut(i);
        for (j, &v) in dys.iter().enumerate() {
            dxs[amax[j] as usize] += v;
        }
    }
    dx
}
