//! Local response normalization (cross-channel) and batch normalization.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Cross-channel LRN: `y_c = x_c * (k + alpha/size * sum_{j in win(c)} x_j^2)^(-beta)`
/// with a centered channel window of `size` channels, clamped at the ends.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LrnParams {
    pub size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        // Standard VGG-M constants.
        LrnParams {
            size: 5,
            alpha: 1e-4,
            beta: 0.75,
            k: 2.0,
        }
    }
}

pub struct LrnCache<S> {
    /// Denominator base `D = k + alpha/size * window_sum(x^2)`, same shape as x.
    denom: Tensor<S>,
}

/// `d^(-beta)`; the standard beta = 3/4 gets a sqrt-only fast path
/// (`d^(-3/4) = 1/sqrt(d * sqrt(d))`), `powf` is an order of magnitude
/// slower and dominates the whole forward pass otherwise.
#[inline(always)]
fn pow_neg_beta<S: Scalar>(d: S, beta: f64, neg_beta: S) -> S {
    if beta == 0.75 {
        S::one() / (d * d.sqrt()).sqrt()
    } else {
        d.powf(neg_beta)
    }
}

pub fn lrn_forward<S: Scalar>(p: &LrnParams, x: &Tensor<S>) -> (Tensor<S>, LrnCache<S>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let half = p.size / 2;
    let scale = S::cast(p.alpha / p.size as f64);
    let k = S::cast(p.k);
    let beta = S::cast(p.beta);
    let plane = h * w;
    let mut denom = Tensor::zeros_like(x);
    let mut y = Tensor::zeros_like(x);
    // Sliding channel window: one add and one subtract per element instead
    // of re-summing the window at every position.
    let mut acc = vec![S::zero(); plane];
    let mut sq = vec![S::zero(); c * plane];
    for i in 0..n {
        let xs = x.batch_item(i);
        let ds = denom.batch_item_mut(i);
        for (s, &v) in sq.iter_mut().zip(xs.iter()) {
            *s = v * v;
        }
        acc.fill(S::zero());
        for j in 0..=half.min(c - 1) {
            let p = &sq[j * plane..(j + 1) * plane];
            for (a, &v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
        for ch in 0..c {
            for (d, &a) in ds[ch * plane..(ch + 1) * plane].iter_mut().zip(acc.iter()) {
                *d = k + scale * a;
            }
            let enter = ch + half + 1;
            if enter < c {
                let p = &sq[enter * plane..(enter + 1) * plane];
                for (a, &v) in acc.iter_mut().zip(p) {
                    *a += v;
                }
            }
            if ch >= half {
                let leave = ch - half;
                let p = &sq[leave * plane..(leave + 1) * plane];
                for (a, &v) in acc.iter_mut().zip(p) {
                    *a -= v;
                }
            }
        }
    }
    let neg_beta = -beta;
    for i in 0..x.len() {
        y.data_mut()[i] = x.data()[i] * pow_neg_beta(denom.data()[i], p.beta, neg_beta);
    }
    (y, LrnCache { denom })
}

pub fn lrn_backward<S: Scalar>(
    p: &LrnParams,
    x: &Tensor<S>,
    cache: &LrnCache<S>,
    dy: &Tensor<S>,
) -> Tensor<S> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let half = p.size / 2;
    let beta = S::cast(p.beta);
    let coeff = S::cast(2.0 * p.alpha * p.beta / p.size as f64);
    let plane = h * w;
    let mut dx = Tensor::zeros_like(x);
    // s_c = dy_c * x_c * D_c^(-beta-1); dx_j = dy_j * D_j^(-beta)
    //      - coeff * x_j * sum_{c in win(j)} s_c   (window is symmetric)
    let mut s = Tensor::zeros_like(x);
    let neg_beta = -beta;
    for i in 0..x.len() {
        let d = cache.denom.data()[i];
        let d_nb = pow_neg_beta(d, p.beta, neg_beta);
        s.data_mut()[i] = dy.data()[i] * x.data()[i] * d_nb / d;
        dx.data_mut()[i] = dy.data()[i] * d_nb;
    }
    for i in 0..n {
        let ss = s.batch_item(i);
        let xs = x.batch_item(i);
        let dxs = dx.batch_item_mut(i);
        for ch in 0..c {
            let lo = ch.saturating_sub(half);
            let hi = (ch + half).min(c - 1);
            for pos in 0..plane {
                let mut acc = S::zero();
                for j in lo..=hi {
                    acc += ss[j * plane + pos];
                }
                dxs[ch * plane + pos] -= coeff * xs[ch * plane + pos] * acc;
            }
        }
    }
    dx
}

/// Per-channel batch normalization over `[N, C, H, W]`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<S> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    pub eps: f64,
    /// Fraction of the batch statistic blended into the running stats.
    pub momentum: f64,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::filled(&[channels], S::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], S::one()),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.dim(0)
    }
}

pub struct BnCache<S> {
    pub xhat: Tensor<S>,
    pub invstd: Vec<S>,
    pub mean: Vec<S>,
}

/// Training-mode forward; updates the running statistics in place.
pub fn batchnorm_forward_train<S: Scalar>(
    bn: &mut BatchNorm2d<S>,
    x: &Tensor<S>,
) -> (Tensor<S>, BnCache<S>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let m = (n * h * w) as f64;
    let plane = h * w;
    let mut mean = vec![S::zero(); c];
    let mut var = vec![S::zero(); c];
    for ch in 0..c {
        let mut sum = S::zero();
        let mut sum2 = S::zero();
        for i in 0..n {
            let xs = x.batch_item(i);
            for &v in &xs[ch * plane..(ch + 1) * plane] {
                sum += v;
                sum2 += v * v;
            }
        }
        let mu = sum / S::cast(m);
        mean[ch] = mu;
        var[ch] = sum2 / S::cast(m) - mu * mu;
    }
    let mom = S::cast(bn.momentum);
    let one_m = S::one() - mom;
    for ch in 0..c {
        bn.running_mean.data_mut()[ch] = one_m * bn.running_mean.data()[ch] + mom * mean[ch];
        bn.running_var.data_mut()[ch] = one_m * bn.running_var.data()[ch] + mom * var[ch];
    }
    let invstd: Vec<S> = var
        .iter()
        .map(|&v| S::one() / (v + S::cast(bn.eps)).sqrt())
        .collect();
    let mut xhat = Tensor::zeros_like(x);
    let mut y = Tensor::zeros_like(x);
    for i in 0..n {
        let xs = x.batch_item(i);
        let xh = xhat.batch_item_mut(i);
        for ch in 0..c {
            for pos in 0..plane {
                xh[ch * plane + pos] = (xs[ch * plane + pos] - mean[ch]) * invstd[ch];
            }
        }
    }
    for i in 0..n {
        let xh = xhat.batch_item(i);
        let ys = y.batch_item_mut(i);
        for ch in 0..c {
            let g = bn.gamma.data()[ch];
            let b = bn.beta.data()[ch];
            for pos in 0..plane {
                ys[ch * plane + pos] = g * xh[ch * plane + pos] + b;
            }
        }
    }
    (y, BnCache { xhat, invstd, mean })
}

/// Inference-mode forward using running statistics.
pub fn batchnorm_forward_eval<S: Scalar>(bn: &BatchNorm2d<S>, x: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let plane = h * w;
    let mut y = Tensor::zeros_like(x);
    for i in 0..n {
        let xs = x.batch_item(i);
        let ys = y.batch_item_mut(i);
        for ch in 0..c {
            let inv = S::one() / (bn.running_var.data()[ch] + S::cast(bn.eps)).sqrt();
            let g = bn.gamma.data()[ch] * inv;
            let b = bn.beta.data()[ch] - bn.gamma.data()[ch] * bn.running_mean.data()[ch] * inv;
            for pos in 0..plane {
                ys[ch * plane + pos] = g * xs[ch * plane + pos] + b;
            }
        }
    }
    y
}

pub struct BnGrads<S> {
    pub dx: Tensor<S>,
    pub dgamma: Tensor<S>,
    pub dbeta: Tensor<S>,
}

/// Backward through the training-mode forward (gradients flow through the
/// batch statistics).
pub fn batchnorm_backward<S: Scalar>(
    bn: &BatchNorm2d<S>,
    cache: &BnCache<S>,
    dy: &Tensor<S>,
) -> BnGrads<S> {
    let (n, c, h, w) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
    let plane = h * w;
    let m = S::cast((n * h * w) as f64);
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut sum_dy = vec![S::zero(); c];
    let mut sum_dy_xhat = vec![S::zero(); c];
    for i in 0..n {
        let dys = dy.batch_item(i);
        let xh = cache.xhat.batch_item(i);
        for ch in 0..c {
            for pos in 0..plane {
                let g = dys[ch * plane + pos];
                sum_dy[ch] += g;
                sum_dy_xhat[ch] += g * xh[ch * plane + pos];
            }
        }
    }
    for ch in 0..c {
        dgamma.data_mut()[ch] = sum_dy_xhat[ch];
        dbeta.data_mut()[ch] = sum_dy[ch];
    }
    // dx = gamma*invstd/m * (m*dy - sum_dy - xhat * sum_dy_xhat)
    let mut dx = Tensor::zeros_like(dy);
    for i in 0..n {
        let dys = dy.batch_item(i);
        let xh = cache.xhat.batch_item(i);
        let dxs = dx.batch_item_mut(i);
        for ch in 0..c {
            let coef = bn.gamma.data()[ch] * cache.invstd[ch] / m;
            for pos in 0..plane {
                let idx = ch * plane + pos;
                dxs[idx] = coef * (m * dys[idx] - sum_dy[ch] - xh[idx] * sum_dy_xhat[ch]);
            }
        }
    }
    BnGrads { dx, dgamma, dbeta }
}
