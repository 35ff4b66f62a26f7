//! Box geometry, candidate samplers, patch cropping and bounding-box
//! regression.
//!
//! Boxes live in continuous pixel coordinates with `(x, y)` the top-left
//! corner. Samplers take an explicit generator handle and are fully
//! deterministic under a fixed seed.

use crate::data::ImageBuf;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoundingBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn center_distance(&self, other: &BoundingBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    /// Shift (and if necessary shrink) the box so it lies inside `bounds`.
    pub fn clamp_into(&self, bounds: ImageBounds) -> BoundingBox {
        let bw = bounds.width as f64;
        let bh = bounds.height as f64;
        let w = self.w.min(bw);
        let h = self.h.min(bh);
        let x = self.x.clamp(0.0, bw - w);
        let y = self.y.clamp(0.0, bh - h);
        BoundingBox { x, y, w, h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageBounds {
    pub width: usize,
    pub height: usize,
}

impl ImageBounds {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBounds { width, height }
    }
}

/// Tracker state in (center, scale) parameterization. The box it denotes
/// is `ref_size * scale` centered at `(cx, cy)`; `ref_size` is carried by
/// the tracker (first-frame target size).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateState {
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
}

impl CandidateState {
    pub fn from_box(b: &BoundingBox, ref_w: f64, ref_h: f64) -> Self {
        let (cx, cy) = b.center();
        // Joint scale: geometric mean of the per-axis ratios.
        let scale = ((b.w / ref_w) * (b.h / ref_h)).sqrt();
        CandidateState { cx, cy, scale }
    }

    pub fn to_box(&self, ref_w: f64, ref_h: f64) -> BoundingBox {
        BoundingBox::from_center(self.cx, self.cy, ref_w * self.scale, ref_h * self.scale)
    }

    /// Mean of target width and height at the current scale.
    pub fn radius(&self, ref_w: f64, ref_h: f64) -> f64 {
        (ref_w + ref_h) / 2.0 * self.scale
    }
}

/// Intersection over union; 0 for disjoint boxes, exactly 1 for identical
/// ones. The result is clamped into [0, 1] — the naive ratio can drift a
/// few ulps past 1 when large coordinates cancel against small sizes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

/// Gaussian candidate sampler configuration. Translation standard
/// deviation is `trans_sigma * r` per axis (`r` = mean of target width and
/// height); scale is perturbed multiplicatively by
/// `scale_base^N(0, scale_sigma^2)`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GaussianSampler {
    pub trans_sigma: f64,
    pub scale_sigma: f64,
    pub scale_base: f64,
}

impl Default for GaussianSampler {
    fn default() -> Self {
        // diag(0.09 r^2, 0.09 r^2, 0.25) on (cx, cy, log-scale).
        GaussianSampler {
            trans_sigma: 0.3,
            scale_sigma: 0.5,
            scale_base: 1.05,
        }
    }
}

impl GaussianSampler {
    pub fn sample(
        &self,
        prev: &CandidateState,
        ref_w: f64,
        ref_h: f64,
        n: usize,
        bounds: ImageBounds,
        rng: &mut Rng,
    ) -> Result<Vec<BoundingBox>> {
        let r = prev.radius(ref_w, ref_h);
        if r <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate previous state: r = {r}"
            )));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let cx = prev.cx + rng.normal() * self.trans_sigma * r;
            let cy = prev.cy + rng.normal() * self.trans_sigma * r;
            let scale = prev.scale * self.scale_base.powf(rng.normal() * self.scale_sigma);
            let b = CandidateState { cx, cy, scale }
                .to_box(ref_w, ref_h)
                .clamp_into(bounds);
            out.push(b);
        }
        Ok(out)
    }
}

/// Uniform sampler range: translation within `+-trans * r` per axis and
/// scale factor uniform in `[scale_lo, scale_hi]`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct UniformRange {
    pub trans: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
}

impl Default for UniformRange {
    fn default() -> Self {
        UniformRange {
            trans: 1.0,
            scale_lo: 0.7,
            scale_hi: 1.4,
        }
    }
}

pub fn sample_uniform(
    gt: &BoundingBox,
    n: usize,
    range: UniformRange,
    bounds: ImageBounds,
    rng: &mut Rng,
) -> Result<Vec<BoundingBox>> {
    if range.trans < 0.0 || range.scale_hi < range.scale_lo || range.scale_lo <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "empty or invalid uniform range {range:?}"
        )));
    }
    let (cx, cy) = gt.center();
    let r = (gt.w + gt.h) / 2.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let dx = rng.range(-1.0, 1.0) * range.trans * r;
        let dy = rng.range(-1.0, 1.0) * range.trans * r;
        let s = rng.range(range.scale_lo, range.scale_hi);
        let b = BoundingBox::from_center(cx + dx, cy + dy, gt.w * s, gt.h * s).clamp_into(bounds);
        out.push(b);
    }
    Ok(out)
}

/// Global sampler: box centers uniform over the whole image at the size of
/// the reference box.
pub fn sample_global(
    bounds: ImageBounds,
    n: usize,
    scale_of: &BoundingBox,
    rng: &mut Rng,
) -> Vec<BoundingBox> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let cx = rng.range(0.0, bounds.width as f64);
        let cy = rng.range(0.0, bounds.height as f64);
        out.push(
            BoundingBox::from_center(cx, cy, scale_of.w, scale_of.h).clamp_into(bounds),
        );
    }
    out
}

/// Partition samples by IoU with the ground truth: `>= pos_thr` positive,
/// `<= neg_thr` negative, the rest discarded.
pub fn label_samples(
    samples: &[BoundingBox],
    gt: &BoundingBox,
    pos_thr: f64,
    neg_thr: f64,
) -> (Vec<BoundingBox>, Vec<BoundingBox>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in samples {
        let v = iou(s, gt);
        if v >= pos_thr {
            pos.push(*s);
        } else if v <= neg_thr {
            neg.push(*s);
        }
    }
    (pos, neg)
}

/// Crop `bbox` (expanded by `context * size` on each side) from the image,
/// resize bilinearly to `out_size` and scale values to `[0, 1]`.
///
/// Out-of-image source coordinates are clamped (replicate padding).
/// Sampling uses the half-pixel-center convention
/// `src = origin + (dst + 0.5) * scale - 0.5`, which makes a same-size crop
/// at an integer origin an exact identity.
pub fn crop_patch<S: Scalar>(
    image: &ImageBuf,
    bbox: &BoundingBox,
    out_size: usize,
    context: f64,
) -> Result<Tensor<S>> {
    if !bbox.is_valid() {
        return Err(Error::InvalidArgument(format!("invalid box {bbox:?}")));
    }
    let pad_w = context * bbox.w;
    let pad_h = context * bbox.h;
    let bx = bbox.x - pad_w;
    let by = bbox.y - pad_h;
    let bw = bbox.w + 2.0 * pad_w;
    let bh = bbox.h + 2.0 * pad_h;
    if bx + bw <= 0.0
        || by + bh <= 0.0
        || bx >= image.width as f64
        || by >= image.height as f64
    {
        return Err(Error::InvalidArgument(format!(
            "box {bbox:?} lies fully outside the {}x{} image",
            image.width, image.height
        )));
    }
    let w = image.width;
    let h = image.height;
    let sx = bw / out_size as f64;
    let sy = bh / out_size as f64;
    let inv255 = S::cast(1.0 / 255.0);
    // Precompute per-axis source indices and weights once; the inner loop
    // is then a pure gather-and-lerp.
    let mut xi = Vec::with_capacity(out_size);
    for i in 0..out_size {
        let fx = bx + (i as f64 + 0.5) * sx - 0.5;
        let x0 = fx.floor();
        let wx = (fx - x0) as f32;
        let x0i = (x0 as isize).clamp(0, w as isize - 1) as usize;
        let x1i = ((x0 as isize) + 1).clamp(0, w as isize - 1) as usize;
        xi.push((x0i * 3, x1i * 3, wx));
    }
    let mut out = Tensor::zeros(&[3, out_size, out_size]);
    let data = out.data_mut();
    let plane = out_size * out_size;
    for j in 0..out_size {
        let fy = by + (j as f64 + 0.5) * sy - 0.5;
        let y0 = fy.floor();
        let wy = (fy - y0) as f32;
        let y0i = (y0 as isize).clamp(0, h as isize - 1) as usize;
        let y1i = ((y0 as isize) + 1).clamp(0, h as isize - 1) as usize;
        let row0 = &image.data[y0i * w * 3..(y0i + 1) * w * 3];
        let row1 = &image.data[y1i * w * 3..(y1i + 1) * w * 3];
        for (i, &(x0, x1, wx)) in xi.iter().enumerate() {
            for c in 0..3 {
                let p00 = row0[x0 + c] as f32;
                let p01 = row0[x1 + c] as f32;
                let p10 = row1[x0 + c] as f32;
                let p11 = row1[x1 + c] as f32;
                let top = p00 + (p01 - p00) * wx;
                let bot = p10 + (p11 - p10) * wx;
                data[c * plane + j * out_size + i] =
                    S::cast((top + (bot - top) * wy) as f64) * inv255;
            }
        }
    }
    Ok(out)
}

/// Linear ridge regressor from level-3 features to box offsets in the
/// standard `(dx, dy, dw, dh)` parameterization. Trained once on the first
/// frame; no intercept, so infinite regularization shrinks all predicted
/// offsets to zero.
#[derive(Debug, Clone)]
pub struct BboxRegressor {
    /// `[4][dim]` weight rows for dx, dy, dw, dh.
    weights: Vec<Vec<f64>>,
}

fn regression_targets(b: &BoundingBox, gt: &BoundingBox) -> [f64; 4] {
    let (pcx, pcy) = b.center();
    let (gcx, gcy) = gt.center();
    [
        (gcx - pcx) / b.w,
        (gcy - pcy) / b.h,
        (gt.w / b.w).ln(),
        (gt.h / b.h).ln(),
    ]
}

/// Solve `(K + lambda I) alpha = y` for SPD `K` via Cholesky.
fn cholesky_solve(k: &mut [f64], n: usize, y: &mut [[f64; 4]]) -> Result<()> {
    // In-place lower Cholesky factor.
    for i in 0..n {
        for j in 0..=i {
            let mut s = k[i * n + j];
            for l in 0..j {
                s -= k[i * n + l] * k[j * n + l];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Training(format!(
                        "ridge system not positive definite at row {i}; \
                         increase regularization or sample diversity"
                    )));
                }
                k[i * n + j] = s.sqrt();
            } else {
                k[i * n + j] = s / k[j * n + j];
            }
        }
    }
    // Forward then backward substitution for each of the 4 target dims.
    for d in 0..4 {
        for i in 0..n {
            let mut s = y[i][d];
            for l in 0..i {
                s -= k[i * n + l] * y[l][d];
            }
            y[i][d] = s / k[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i][d];
            for l in i + 1..n {
                s -= k[l * n + i] * y[l][d];
            }
            y[i][d] = s / k[i * n + i];
        }
    }
    Ok(())
}

/// Fit the regressor with ridge regularization `lambda` using the dual
/// (kernel) form, which needs only an `n x n` solve for `n` samples.
pub fn train_bbox_regressor<S: Scalar>(
    features: &Tensor<S>,
    boxes: &[BoundingBox],
    gt: &BoundingBox,
    lambda: f64,
) -> Result<BboxRegressor> {
    assert_eq!(features.ndim(), 2);
    let n = features.dim(0);
    let dim = features.dim(1);
    if n != boxes.len() {
        return Err(Error::InvalidArgument(format!(
            "{n} feature rows but {} boxes",
            boxes.len()
        )));
    }
    if n < 2 {
        return Err(Error::Training(format!(
            "bbox regression needs at least 2 samples, got {n}"
        )));
    }
    let x: Vec<f64> = features.iter().map(|v| v.as_f64()).collect();
    // K = X X^T + lambda I
    let mut k = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for l in 0..dim {
                s += x[i * dim + l] * x[j * dim + l];
            }
            k[i * n + j] = s;
            k[j * n + i] = s;
        }
        k[i * n + i] += lambda;
    }
    let mut alpha: Vec<[f64; 4]> = boxes.iter().map(|b| regression_targets(b, gt)).collect();
    cholesky_solve(&mut k, n, &mut alpha)?;
    // w_d = X^T alpha_d
    let mut weights = vec![vec![0.0f64; dim]; 4];
    for i in 0..n {
        for d in 0..4 {
            let a = alpha[i][d];
            if a == 0.0 {
                continue;
            }
            for l in 0..dim {
                weights[d][l] += a * x[i * dim + l];
            }
        }
    }
    Ok(BboxRegressor { weights })
}

/// Refine `bbox` using the offsets predicted from its feature vector.
pub fn apply_bbox_regression<S: Scalar>(
    reg: &BboxRegressor,
    feature: &[S],
    bbox: &BoundingBox,
) -> BoundingBox {
    let mut t = [0.0f64; 4];
    for (d, row) in reg.weights.iter().enumerate() {
        debug_assert_eq!(row.len(), feature.len());
        let mut s = 0.0;
        for (w, f) in row.iter().zip(feature.iter()) {
            s += w * f.as_f64();
        }
        t[d] = s;
    }
    let (cx, cy) = bbox.center();
    let w = bbox.w * t[2].exp();
    let h = bbox.h * t[3].exp();
    BoundingBox::from_center(cx + t[0] * bbox.w, cy + t[1] * bbox.h, w, h)
}
