//! 2D convolution via im2col + GEMM, with stride, zero padding and dilation.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rayon::prelude::*;

/// Samples per parallel work unit. Fixed (not tied to the thread count) so
/// floating-point accumulation order — and thus every result bit — is
/// machine-independent.
const PAR_CHUNK: usize = 8;

#[derive(Debug, Clone)]
pub struct ConvLayer<S> {
    /// `[out_channels, in_channels, kh, kw]`
    pub weight: Tensor<S>,
    /// `[out_channels]`
    pub bias: Tensor<S>,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl<S: Scalar> ConvLayer<S> {
    pub fn new(out_c: usize, in_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvLayer {
            weight: Tensor::zeros(&[out_c, in_c, k, k]),
            bias: Tensor::zeros(&[out_c]),
            stride,
            pad,
            dilation: 1,
        }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }
}

/// Spatial output size of a conv/pool window: `(n + 2p - eff_k)/s + 1`
/// with floor division; `eff_k = (k - 1) * dilation + 1`.
pub fn conv2d_output_size(n: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> usize {
    let eff = (k - 1) * dilation + 1;
    assert!(
        n + 2 * pad >= eff,
        "input {n} too small for kernel {k} (dilation {dilation}, pad {pad})"
    );
    (n + 2 * pad - eff) / stride + 1
}

/// Unfold one `[C, H, W]` sample into `[C*kh*kw, oh*ow]` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    x: &[S],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
    oh: usize,
    ow: usize,
    col: &mut [S],
) {
    debug_assert_eq!(col.len(), c_in * k * k * oh * ow);
    let n_pos = oh * ow;
    for c in 0..c_in {
        let x_plane = &x[c * h * w..(c + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = ((c * k + kh) * k + kw) * n_pos;
                // Horizontal span of in-bounds output columns for this tap:
                // ix = ox*stride + kw*dilation - pad must lie in [0, w).
                let off = kw as isize * dilation as isize - pad as isize;
                let ox_lo = if off >= 0 {
                    0
                } else {
                    ((-off) as usize).div_ceil(stride)
                };
                let ox_hi_excl = if off >= w as isize {
                    0
                } else {
                    (((w as isize - 1 - off) as usize) / stride + 1).min(ow)
                };
                for oy in 0..oh {
                    let iy = (oy * stride + kh * dilation) as isize - pad as isize;
                    let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(S::zero());
                        continue;
                    }
                    let x_row = &x_plane[iy as usize * w..(iy as usize + 1) * w];
                    dst[..ox_lo.min(ow)].fill(S::zero());
                    if ox_hi_excl < ow {
                        dst[ox_hi_excl..].fill(S::zero());
                    }
                    if ox_lo >= ox_hi_excl {
                        continue;
                    }
                    let x0 = (ox_lo * stride) as isize + off;
                    debug_assert!(x0 >= 0);
                    let src = &x_row[x0 as usize..];
                    let span = &mut dst[ox_lo..ox_hi_excl];
                    if stride == 1 {
                        span.copy_from_slice(&src[..span.len()]);
                    } else {
                        for (i, d) in span.iter_mut().enumerate() {
                            *d = src[i * stride];
                        }
                    }
                }
            }
        }
    }
}

/// Fold `[C*kh*kw, oh*ow]` columns back into a `[C, H, W]` gradient
/// (scatter-add, the adjoint of [`im2col`]).
#[allow(clippy::too_many_arguments)]
fn col2im<S: Scalar>(
    col: &[S],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
    oh: usize,
    ow: usize,
    dx: &mut [S],
) {
    let n_pos = oh * ow;
    for c in 0..c_in {
        let dx_plane = &mut dx[c * h * w..(c + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = ((c * k + kh) * k + kw) * n_pos;
                for oy in 0..oh {
                    let iy = (oy * stride + kh * dilation) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &col[row + oy * ow..row + (oy + 1) * ow];
                    let dx_row = &mut dx_plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kw * dilation) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution over a batched `[N, C, H, W]` input.
pub fn conv2d_forward<S: Scalar>(layer: &ConvLayer<S>, x: &Tensor<S>) -> Tensor<S> {
    assert_eq!(x.ndim(), 4, "conv2d expects [N, C, H, W]");
    let (n, c_in, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    assert_eq!(
        c_in,
        layer.in_channels(),
        "conv2d input channels {} != layer {}",
        c_in,
        layer.in_channels()
    );
    let k = layer.kernel();
    let oh = conv2d_output_size(h, k, layer.stride, layer.pad, layer.dilation);
    let ow = conv2d_output_size(w, k, layer.stride, layer.pad, layer.dilation);
    let c_out = layer.out_channels();
    let kk = c_in * k * k;
    let n_pos = oh * ow;

    let mut y = Tensor::zeros(&[n, c_out, oh, ow]);
    let per_in: usize = c_in * h * w;
    let per_out = c_out * n_pos;
    let x_data = x.data();
    // Pointwise stride-1 convolution needs no unfolding: the input plane
    // already is the column matrix.
    let pointwise = k == 1 && layer.stride == 1 && layer.pad == 0;
    y.data_mut()
        .par_chunks_mut(per_out * PAR_CHUNK)
        .enumerate()
        .for_each(|(chunk_idx, out_chunk)| {
            let mut col = if pointwise {
                Vec::new()
            } else {
                vec![S::zero(); kk * n_pos]
            };
            for (j, out) in out_chunk.chunks_mut(per_out).enumerate() {
                let i = chunk_idx * PAR_CHUNK + j;
                let x_i = &x_data[i * per_in..(i + 1) * per_in];
                let cols: &[S] = if pointwise {
                    x_i
                } else {
                    im2col(
                        x_i,
                        c_in,
                        h,
                        w,
                        k,
                        layer.stride,
                        layer.pad,
                        layer.dilation,
                        oh,
                        ow,
                        &mut col,
                    );
                    &col
                };
                // Computed transposed (positions as rows): the position
                // count is the large dimension, which packs far better
                // than a thin channel-row matrix. Output strides place the
                // result directly in [c_out, n_pos] row-major layout.
                S::gemm(
                    n_pos,
                    kk,
                    c_out,
                    S::one(),
                    cols,
                    1,
                    n_pos as isize,
                    layer.weight.data(),
                    1,
                    kk as isize,
                    S::zero(),
                    out,
                    1,
                    n_pos as isize,
                );
                for c in 0..c_out {
                    let b = layer.bias.data()[c];
                    for v in &mut out[c * n_pos..(c + 1) * n_pos] {
                        *v += b;
                    }
                }
            }
        });
    y
}

#[derive(Debug)]
pub struct ConvGrads<S> {
    pub dx: Tensor<S>,
    pub dw: Tensor<S>,
    pub db: Tensor<S>,
}

/// Backward pass; recomputes im2col rather than caching it.
pub fn conv2d_backward<S: Scalar>(
    layer: &ConvLayer<S>,
    x: &Tensor<S>,
    dy: &Tensor<S>,
) -> ConvGrads<S> {
    let (_n, c_in, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let k = layer.kernel();
    let oh = dy.dim(2);
    let ow = dy.dim(3);
    let c_out = layer.out_channels();
    let kk = c_in * k * k;
    let n_pos = oh * ow;

    let mut dx = Tensor::zeros_like(x);
    let per_in = c_in * h * w;
    let per_out = c_out * n_pos;
    let x_data = x.data();
    let dy_data = dy.data();

    // Parallel over fixed-size sample chunks: dx chunks are disjoint;
    // per-chunk dw/db partials are reduced serially in chunk order so the
    // result is bitwise machine-independent.
    let partials: Vec<(Tensor<S>, Tensor<S>)> = dx
        .data_mut()
        .par_chunks_mut(per_in * PAR_CHUNK)
        .enumerate()
        .map(|(chunk_idx, dx_chunk)| {
            let mut dw = Tensor::zeros_like(&layer.weight);
            let mut db = Tensor::zeros_like(&layer.bias);
            let pointwise = k == 1 && layer.stride == 1 && layer.pad == 0;
            let mut col = if pointwise {
                Vec::new()
            } else {
                vec![S::zero(); kk * n_pos]
            };
            for (j, dx_i) in dx_chunk.chunks_mut(per_in).enumerate() {
                let i = chunk_idx * PAR_CHUNK + j;
                let dy_i = &dy_data[i * per_out..(i + 1) * per_out];
                let x_i = &x_data[i * per_in..(i + 1) * per_in];
                let cols: &[S] = if pointwise {
                    x_i
                } else {
                    im2col(
                        x_i,
                        c_in,
                        h,
                        w,
                        k,
                        layer.stride,
                        layer.pad,
                        layer.dilation,
                        oh,
                        ow,
                        &mut col,
                    );
                    &col
                };
                // dW += dY * col^T
                S::gemm(
                    c_out,
                    n_pos,
                    kk,
                    S::one(),
                    dy_i,
                    n_pos as isize,
                    1,
                    cols,
                    1,
                    n_pos as isize,
                    S::one(),
                    dw.data_mut(),
                    kk as isize,
                    1,
                );
                // dcol = W^T * dY; for the pointwise case dcol *is* dx.
                if pointwise {
                    S::gemm(
                        kk,
                        c_out,
                        n_pos,
                        S::one(),
                        layer.weight.data(),
                        1,
                        kk as isize,
                        dy_i,
                        n_pos as isize,
                        1,
                        S::zero(),
                        dx_i,
                        n_pos as isize,
                        1,
                    );
                } else {
                    let mut dcol = vec![S::zero(); kk * n_pos];
                    S::gemm(
                        kk,
                        c_out,
                        n_pos,
                        S::one(),
                        layer.weight.data(),
                        1,
                        kk as isize,
                        dy_i,
                        n_pos as isize,
                        1,
                        S::zero(),
                        &mut dcol,
                        n_pos as isize,
                        1,
                    );
                    col2im(
                        &dcol,
                        c_in,
                        h,
                        w,
                        k,
                        layer.stride,
                        layer.pad,
                        layer.dilation,
                        oh,
                        ow,
                        dx_i,
                    );
                }
                for c in 0..c_out {
                    let mut s = S::zero();
                    for &v in &dy_i[c * n_pos..(c + 1) * n_pos] {
                        s += v;
                    }
                    db.data_mut()[c] += s;
                }
            }
            (dw, db)
        })
        .collect();
    let mut dw = Tensor::zeros_like(&layer.weight);
    let mut db = Tensor::zeros_like(&layer.bias);
    for (pw, pb) in partials {
        dw.add_assign(&pw);
        db.add_assign(&pb);
    }
    ConvGrads { dx, dw, db }
}
