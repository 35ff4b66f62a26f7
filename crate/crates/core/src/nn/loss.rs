//! Binary softmax cross-entropy over `[neg, pos]` logit pairs.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean softmax cross-entropy. `logits` is `[N, 2]` with column 0 the
/// negative-class logit and column 1 the positive-class logit; `labels[i]`
/// is true for positive samples. Returns the scalar loss and `dL/dlogits`.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[bool],
) -> (S, Tensor<S>) {
    assert_eq!(logits.ndim(), 2);
    assert_eq!(logits.dim(1), 2, "binary classifier emits two logits");
    let n = logits.dim(0);
    assert_eq!(n, labels.len(), "label count mismatch");
    assert!(n > 0, "empty batch");
    let inv_n = S::cast(1.0 / n as f64);
    let mut loss = S::zero();
    let mut grad = Tensor::zeros_like(logits);
    for i in 0..n {
        let row = logits.batch_item(i);
        let (neg, pos) = (row[0], row[1]);
        let m = neg.max(pos);
        let e_neg = (neg - m).exp();
        let e_pos = (pos - m).exp();
        let z = e_neg + e_pos;
        let log_z = m + z.ln();
        let target = if labels[i] { pos } else { neg };
        loss += log_z - target;
        let p_neg = e_neg / z;
        let p_pos = e_pos / z;
        let g = grad.batch_item_mut(i);
        g[0] = (p_neg - if labels[i] { S::zero() } else { S::one() }) * inv_n;
        g[1] = (p_pos - if labels[i] { S::one() } else { S::zero() }) * inv_n;
    }
    (loss * inv_n, grad)
}
