//! Duality-gated mutual condition block.
//!
//! Each modality's features generate multi-scale conditions that scale the
//! other modality's features, and the scaled features of both modalities
//! are exchanged as shifting terms. Four sigmoid gates (two per direction)
//! attenuate noise on the condition path and the shift path.
//!
//! With RGB features `f_r` and thermal features `f_t`:
//!
//! ```text
//! ms_r = fuse_rgb(msconv_rgb(f_r))          multi-scale RGB condition
//! ms_t = fuse_t(msconv_t(f_t))              multi-scale thermal condition
//! a1 = sigma(G1(ms_r))    a3 = sigma(G3(ms_t))
//! scaled_t2r = f_r .* a3                    RGB scaled by thermal condition
//! scaled_r2t = f_t .* a1                    thermal scaled by RGB condition
//! out_t = scaled_r2t + G2-term(scaled_t2r)
//! out_r = scaled_t2r + G4-term(scaled_r2t)
//! ```
//!
//! The shifting term has two interpretations (see [`GateMode`]): the gate
//! output itself (`Literal`) or the gate masking its own input
//! (`GatedResidual`). Both are implemented; `Literal` is the default.
//!
//! The whole block is linear-plus-sigmoid, so the zero-parameter closed
//! forms used by the test suite follow directly: every gate evaluates to
//! exactly 0.5 when all weights and biases are zero.

use crate::nn::{
    conv2d_backward, conv2d_forward, sigmoid_backward, sigmoid_forward, ConvLayer, GradStore,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Interpretation of the shifting term in the output equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// The gate's sigmoid output is added as the shifting term.
    #[default]
    Literal,
    /// The gate masks its input: `sigma(conv(x)) .* x` is added.
    GatedResidual,
}

impl GateMode {
    pub fn parse(s: &str) -> Option<GateMode> {
        match s {
            "literal" => Some(GateMode::Literal),
            "gated_residual" => Some(GateMode::GatedResidual),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GateMode::Literal => "literal",
            GateMode::GatedResidual => "gated_residual",
        }
    }
}

/// Multi-scale condition generator.
///
/// Level 1 uses four parallel channel-preserving branches over different
/// receptive fields; levels 2 and 3 use a 1x1 -> 3x3 -> 1x1 bottleneck.
/// Purely convolutional: a zero-parameter instance maps everything to zero.
#[derive(Debug, Clone)]
pub enum MsConv<S> {
    MultiBranch {
        b1x1: ConvLayer<S>,
        b3x3: ConvLayer<S>,
        /// 3x3 with dilation 2.
        b3x3d2: ConvLayer<S>,
        b5x5: ConvLayer<S>,
    },
    Bottleneck {
        reduce: ConvLayer<S>,
        conv3x3: ConvLayer<S>,
        expand: ConvLayer<S>,
    },
}

impl<S: Scalar> MsConv<S> {
    /// Zero-initialized parameters for `level` with `channels` inputs.
    pub fn zeros(level: usize, channels: usize) -> Self {
        match level {
            1 => MsConv::MultiBranch {
                // Padding 0/1/2/2 keeps the spatial size for kernels
                // 1, 3, 3-dilated-2 and 5.
                b1x1: ConvLayer::new(channels, channels, 1, 1, 0),
                b3x3: ConvLayer::new(channels, channels, 3, 1, 1),
                b3x3d2: ConvLayer::new(channels, channels, 3, 1, 2).with_dilation(2),
                b5x5: ConvLayer::new(channels, channels, 5, 1, 2),
            },
            2 | 3 => {
                let mid = (channels / 4).max(1);
                MsConv::Bottleneck {
                    reduce: ConvLayer::new(mid, channels, 1, 1, 0),
                    conv3x3: ConvLayer::new(mid, mid, 3, 1, 1),
                    expand: ConvLayer::new(channels, mid, 1, 1, 0),
                }
            }
            _ => panic!("dmc level must be 1, 2 or 3, got {level}"),
        }
    }

    /// Channel count of the multi-scale output before the fusion conv.
    pub fn out_channels(&self) -> usize {
        match self {
            MsConv::MultiBranch { b1x1, .. } => 4 * b1x1.out_channels(),
            MsConv::Bottleneck { expand, .. } => expand.out_channels(),
        }
    }

    fn forward(&self, x: &Tensor<S>) -> (Tensor<S>, MsConvTrace<S>) {
        match self {
            MsConv::MultiBranch {
                b1x1,
                b3x3,
                b3x3d2,
                b5x5,
            } => {
                let y1 = conv2d_forward(b1x1, x);
                let y2 = conv2d_forward(b3x3, x);
                let y3 = conv2d_forward(b3x3d2, x);
                let y4 = conv2d_forward(b5x5, x);
                let (n, c, h, w) = (y1.dim(0), y1.dim(1), y1.dim(2), y1.dim(3));
                let plane = c * h * w;
                let mut out = Tensor::zeros(&[n, 4 * c, h, w]);
                for i in 0..n {
                    let dst = out.batch_item_mut(i);
                    dst[..plane].copy_from_slice(y1.batch_item(i));
                    dst[plane..2 * plane].copy_from_slice(y2.batch_item(i));
                    dst[2 * plane..3 * plane].copy_from_slice(y3.batch_item(i));
                    dst[3 * plane..].copy_from_slice(y4.batch_item(i));
                }
                (out, MsConvTrace::MultiBranch)
            }
            MsConv::Bottleneck {
                reduce,
                conv3x3,
                expand,
            } => {
                let r = conv2d_forward(reduce, x);
                let m = conv2d_forward(conv3x3, &r);
                let out = conv2d_forward(expand, &m);
                (out, MsConvTrace::Bottleneck { reduced: r, mid: m })
            }
        }
    }

    fn backward(
        &self,
        x: &Tensor<S>,
        trace: &MsConvTrace<S>,
        dy: &Tensor<S>,
        prefix: &str,
        grads: &mut GradStore<S>,
    ) -> Tensor<S> {
        match (self, trace) {
            (
                MsConv::MultiBranch {
                    b1x1,
                    b3x3,
                    b3x3d2,
                    b5x5,
                },
                MsConvTrace::MultiBranch,
            ) => {
                let (n, c4, h, w) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
                let c = c4 / 4;
                let plane = c * h * w;
                let mut dx = Tensor::zeros_like(x);
                let branches: [(&ConvLayer<S>, &str, usize); 4] = [
                    (b1x1, "b1x1", 0),
                    (b3x3, "b3x3", 1),
                    (b3x3d2, "b3x3d2", 2),
                    (b5x5, "b5x5", 3),
                ];
                for (layer, name, slot) in branches {
                    let mut dpart = Tensor::zeros(&[n, c, h, w]);
                    for i in 0..n {
                        dpart
                            .batch_item_mut(i)
                            .copy_from_slice(&dy.batch_item(i)[slot * plane..(slot + 1) * plane]);
                    }
                    let g = conv2d_backward(layer, x, &dpart);
                    dx.add_assign(&g.dx);
                    grads.accum(&format!("{prefix}.{name}.weight"), g.dw);
                    grads.accum(&format!("{prefix}.{name}.bias"), g.db);
                }
                dx
            }
            (
                MsConv::Bottleneck {
                    reduce,
                    conv3x3,
                    expand,
                },
                MsConvTrace::Bottleneck { reduced, mid },
            ) => {
                let ge = conv2d_backward(expand, mid, dy);
                grads.accum(&format!("{prefix}.expand.weight"), ge.dw);
                grads.accum(&format!("{prefix}.expand.bias"), ge.db);
                let gm = conv2d_backward(conv3x3, reduced, &ge.dx);
                grads.accum(&format!("{prefix}.conv3x3.weight"), gm.dw);
                grads.accum(&format!("{prefix}.conv3x3.bias"), gm.db);
                let gr = conv2d_backward(reduce, x, &gm.dx);
                grads.accum(&format!("{prefix}.reduce.weight"), gr.dw);
                grads.accum(&format!("{prefix}.reduce.bias"), gr.db);
                gr.dx
            }
            _ => unreachable!("trace kind does not match msconv kind"),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        match self {
            MsConv::MultiBranch {
                b1x1,
                b3x3,
                b3x3d2,
                b5x5,
            } => {
                for (l, n) in [(b1x1, "b1x1"), (b3x3, "b3x3"), (b3x3d2, "b3x3d2"), (b5x5, "b5x5")] {
                    f(format!("{prefix}.{n}.weight"), &l.weight);
                    f(format!("{prefix}.{n}.bias"), &l.bias);
                }
            }
            MsConv::Bottleneck {
                reduce,
                conv3x3,
                expand,
            } => {
                for (l, n) in [(reduce, "reduce"), (conv3x3, "conv3x3"), (expand, "expand")] {
                    f(format!("{prefix}.{n}.weight"), &l.weight);
                    f(format!("{prefix}.{n}.bias"), &l.bias);
                }
            }
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        match self {
            MsConv::MultiBranch {
                b1x1,
                b3x3,
                b3x3d2,
                b5x5,
            } => {
                for (l, n) in [
                    (b1x1, "b1x1"),
                    (b3x3, "b3x3"),
                    (b3x3d2, "b3x3d2"),
                    (b5x5, "b5x5"),
                ] {
                    f(format!("{prefix}.{n}.weight"), &mut l.weight);
                    f(format!("{prefix}.{n}.bias"), &mut l.bias);
                }
            }
            MsConv::Bottleneck {
                reduce,
                conv3x3,
                expand,
            } => {
                for (l, n) in [(reduce, "reduce"), (conv3x3, "conv3x3"), (expand, "expand")] {
                    f(format!("{prefix}.{n}.weight"), &mut l.weight);
                    f(format!("{prefix}.{n}.bias"), &mut l.bias);
                }
            }
        }
    }
}

enum MsConvTrace<S> {
    MultiBranch,
    Bottleneck { reduced: Tensor<S>, mid: Tensor<S> },
}

/// One duality-gated mutual condition block at a given level.
#[derive(Debug, Clone)]
pub struct DmcBlock<S> {
    pub level: usize,
    pub msconv_rgb: MsConv<S>,
    pub fuse_rgb: ConvLayer<S>,
    pub msconv_t: MsConv<S>,
    pub fuse_t: ConvLayer<S>,
    /// G1: gates the RGB multi-scale condition (scales thermal features).
    pub gate_cond_rgb: ConvLayer<S>,
    /// G2: gates the shifting term added to the thermal output.
    pub gate_shift_t: ConvLayer<S>,
    /// G3: gates the thermal multi-scale condition (scales RGB features).
    pub gate_cond_t: ConvLayer<S>,
    /// G4: gates the shifting term added to the RGB output.
    pub gate_shift_rgb: ConvLayer<S>,
}

impl<S: Scalar> DmcBlock<S> {
    /// All-zero parameters; useful for the closed-form tests.
    pub fn zeros(level: usize, channels: usize) -> Self {
        let msconv_rgb = MsConv::zeros(level, channels);
        let msconv_t = MsConv::zeros(level, channels);
        let fused_in = msconv_rgb.out_channels();
        DmcBlock {
            level,
            fuse_rgb: ConvLayer::new(channels, fused_in, 1, 1, 0),
            fuse_t: ConvLayer::new(channels, fused_in, 1, 1, 0),
            msconv_rgb,
            msconv_t,
            gate_cond_rgb: ConvLayer::new(channels, channels, 1, 1, 0),
            gate_shift_t: ConvLayer::new(channels, channels, 1, 1, 0),
            gate_cond_t: ConvLayer::new(channels, channels, 1, 1, 0),
            gate_shift_rgb: ConvLayer::new(channels, channels, 1, 1, 0),
        }
    }

    /// Random initialization: He-scaled normals for the condition path and
    /// small gate weights with biased gate offsets — scaling gates start
    /// mostly open (sigmoid(+1.5) ~ 0.82) and shifting gates mostly closed
    /// (sigmoid(-1.5) ~ 0.18), so the block begins near pass-through
    /// instead of the degenerate 0.5*f + 0.5 regime, which stalls
    /// optimization when three blocks are stacked.
    pub fn init(level: usize, channels: usize, rng: &mut Rng) -> Self {
        let mut block = Self::zeros(level, channels);
        block.visit_mut("dmc", &mut |name, t| {
            if name.contains("gate") {
                if name.ends_with("weight") {
                    for v in t.data_mut() {
                        *v = S::cast(rng.normal() * 0.01);
                    }
                } else {
                    let bias = if name.contains("gate_cond") { 1.5 } else { -1.5 };
                    for v in t.data_mut() {
                        *v = S::cast(bias);
                    }
                }
            } else if name.ends_with("weight") {
                let shape = t.shape().to_vec();
                let fan_in: usize = shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                for v in t.data_mut() {
                    *v = S::cast(rng.normal() * std);
                }
            }
        });
        block
    }

    pub fn channels(&self) -> usize {
        self.fuse_rgb.out_channels()
    }

    /// Swap the modality roles of all parameters. Exchanging inputs and
    /// swapping roles must exchange the two outputs exactly; the test suite
    /// asserts this bit-for-bit.
    pub fn swapped_roles(&self) -> Self {
        DmcBlock {
            level: self.level,
            msconv_rgb: self.msconv_t.clone(),
            fuse_rgb: self.fuse_t.clone(),
            msconv_t: self.msconv_rgb.clone(),
            fuse_t: self.fuse_rgb.clone(),
            gate_cond_rgb: self.gate_cond_t.clone(),
            gate_shift_t: self.gate_shift_rgb.clone(),
            gate_cond_t: self.gate_cond_rgb.clone(),
            gate_shift_rgb: self.gate_shift_t.clone(),
        }
    }

    /// Bidirectional mutual conditioning. Returns `(out_rgb, out_t, trace)`.
    pub fn forward(
        &self,
        f_rgb: &Tensor<S>,
        f_t: &Tensor<S>,
        mode: GateMode,
    ) -> (Tensor<S>, Tensor<S>, DmcTrace<S>) {
        assert_eq!(f_rgb.shape(), f_t.shape(), "modality feature shapes differ");
        assert_eq!(
            f_rgb.dim(1),
            self.channels(),
            "dmc level {} expects {} channels, got {}",
            self.level,
            self.channels(),
            f_rgb.dim(1)
        );
        let (msraw_rgb, mstrace_rgb) = self.msconv_rgb.forward(f_rgb);
        let ms_rgb = conv2d_forward(&self.fuse_rgb, &msraw_rgb);
        let (msraw_t, mstrace_t) = self.msconv_t.forward(f_t);
        let ms_t = conv2d_forward(&self.fuse_t, &msraw_t);

        let a1 = sigmoid_forward(&conv2d_forward(&self.gate_cond_rgb, &ms_rgb));
        let a3 = sigmoid_forward(&conv2d_forward(&self.gate_cond_t, &ms_t));

        let scaled_t2r = f_rgb.hadamard(&a3);
        let scaled_r2t = f_t.hadamard(&a1);

        let g2 = sigmoid_forward(&conv2d_forward(&self.gate_shift_t, &scaled_t2r));
        let g4 = sigmoid_forward(&conv2d_forward(&self.gate_shift_rgb, &scaled_r2t));

        let (out_t, out_rgb) = match mode {
            GateMode::Literal => {
                let mut out_t = scaled_r2t.clone();
                out_t.add_assign(&g2);
                let mut out_rgb = scaled_t2r.clone();
                out_rgb.add_assign(&g4);
                (out_t, out_rgb)
            }
            GateMode::GatedResidual => {
                let mut out_t = scaled_r2t.clone();
                out_t.add_assign(&g2.hadamard(&scaled_t2r));
                let mut out_rgb = scaled_t2r.clone();
                out_rgb.add_assign(&g4.hadamard(&scaled_r2t));
                (out_t, out_rgb)
            }
        };
        let trace = DmcTrace {
            msraw_rgb,
            mstrace_rgb,
            ms_rgb,
            msraw_t,
            mstrace_t,
            ms_t,
            a1,
            a3,
            scaled_t2r,
            scaled_r2t,
            g2,
            g4,
            mode,
        };
        (out_rgb, out_t, trace)
    }

    /// Backward through [`Self::forward`]. Parameter gradients are
    /// accumulated under `prefix`; returns `(d_f_rgb, d_f_t)`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        f_rgb: &Tensor<S>,
        f_t: &Tensor<S>,
        trace: &DmcTrace<S>,
        d_out_rgb: &Tensor<S>,
        d_out_t: &Tensor<S>,
        prefix: &str,
        grads: &mut GradStore<S>,
    ) -> (Tensor<S>, Tensor<S>) {
        // Gradients flowing into the two scaled terms and the gate outputs.
        let (mut d_scaled_t2r, mut d_scaled_r2t, d_g2, d_g4) = match trace.mode {
            GateMode::Literal => (
                d_out_rgb.clone(),
                d_out_t.clone(),
                d_out_t.clone(),
                d_out_rgb.clone(),
            ),
            GateMode::GatedResidual => {
                let mut d_t2r = d_out_rgb.clone();
                d_t2r.add_assign(&d_out_t.hadamard(&trace.g2));
                let mut d_r2t = d_out_t.clone();
                d_r2t.add_assign(&d_out_rgb.hadamard(&trace.g4));
                (
                    d_t2r,
                    d_r2t,
                    d_out_t.hadamard(&trace.scaled_t2r),
                    d_out_rgb.hadamard(&trace.scaled_r2t),
                )
            }
        };
        // Through the shift gates back into their inputs.
        let g2b = conv2d_backward(
            &self.gate_shift_t,
            &trace.scaled_t2r,
            &sigmoid_backward(&trace.g2, &d_g2),
        );
        grads.accum(&format!("{prefix}.gate_shift_t.weight"), g2b.dw);
        grads.accum(&format!("{prefix}.gate_shift_t.bias"), g2b.db);
        d_scaled_t2r.add_assign(&g2b.dx);
        let g4b = conv2d_backward(
            &self.gate_shift_rgb,
            &trace.scaled_r2t,
            &sigmoid_backward(&trace.g4, &d_g4),
        );
        grads.accum(&format!("{prefix}.gate_shift_rgb.weight"), g4b.dw);
        grads.accum(&format!("{prefix}.gate_shift_rgb.bias"), g4b.db);
        d_scaled_r2t.add_assign(&g4b.dx);

        // scaled_t2r = f_rgb .* a3, scaled_r2t = f_t .* a1
        let mut d_f_rgb = d_scaled_t2r.hadamard(&trace.a3);
        let d_a3 = d_scaled_t2r.hadamard(f_rgb);
        let mut d_f_t = d_scaled_r2t.hadamard(&trace.a1);
        let d_a1 = d_scaled_r2t.hadamard(f_t);

        // Condition gates back into the fused multi-scale conditions.
        let g1b = conv2d_backward(
            &self.gate_cond_rgb,
            &trace.ms_rgb,
            &sigmoid_backward(&trace.a1, &d_a1),
        );
        grads.accum(&format!("{prefix}.gate_cond_rgb.weight"), g1b.dw);
        grads.accum(&format!("{prefix}.gate_cond_rgb.bias"), g1b.db);
        let g3b = conv2d_backward(
            &self.gate_cond_t,
            &trace.ms_t,
            &sigmoid_backward(&trace.a3, &d_a3),
        );
        grads.accum(&format!("{prefix}.gate_cond_t.weight"), g3b.dw);
        grads.accum(&format!("{prefix}.gate_cond_t.bias"), g3b.db);

        // Fusion convs and the multi-scale trunks.
        let fr = conv2d_backward(&self.fuse_rgb, &trace.msraw_rgb, &g1b.dx);
        grads.accum(&format!("{prefix}.fuse_rgb.weight"), fr.dw);
        grads.accum(&format!("{prefix}.fuse_rgb.bias"), fr.db);
        d_f_rgb.add_assign(&self.msconv_rgb.backward(
            f_rgb,
            &trace.mstrace_rgb,
            &fr.dx,
            &format!("{prefix}.msconv_rgb"),
            grads,
        ));
        let ft = conv2d_backward(&self.fuse_t, &trace.msraw_t, &g3b.dx);
        grads.accum(&format!("{prefix}.fuse_t.weight"), ft.dw);
        grads.accum(&format!("{prefix}.fuse_t.bias"), ft.db);
        d_f_t.add_assign(&self.msconv_t.backward(
            f_t,
            &trace.mstrace_t,
            &ft.dx,
            &format!("{prefix}.msconv_t"),
            grads,
        ));
        (d_f_rgb, d_f_t)
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        self.msconv_rgb.visit(&format!("{prefix}.msconv_rgb"), f);
        self.msconv_t.visit(&format!("{prefix}.msconv_t"), f);
        for (l, n) in [
            (&self.fuse_rgb, "fuse_rgb"),
            (&self.fuse_t, "fuse_t"),
            (&self.gate_cond_rgb, "gate_cond_rgb"),
            (&self.gate_shift_t, "gate_shift_t"),
            (&self.gate_cond_t, "gate_cond_t"),
            (&self.gate_shift_rgb, "gate_shift_rgb"),
        ] {
            f(format!("{prefix}.{n}.weight"), &l.weight);
            f(format!("{prefix}.{n}.bias"), &l.bias);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.msconv_rgb.visit_mut(&format!("{prefix}.msconv_rgb"), f);
        self.msconv_t.visit_mut(&format!("{prefix}.msconv_t"), f);
        for (l, n) in [
            (&mut self.fuse_rgb, "fuse_rgb"),
            (&mut self.fuse_t, "fuse_t"),
            (&mut self.gate_cond_rgb, "gate_cond_rgb"),
            (&mut self.gate_shift_t, "gate_shift_t"),
            (&mut self.gate_cond_t, "gate_cond_t"),
            (&mut self.gate_shift_rgb, "gate_shift_rgb"),
        ] {
            f(format!("{prefix}.{n}.weight"), &mut l.weight);
            f(format!("{prefix}.{n}.bias"), &mut l.bias);
        }
    }
}

/// Intermediates kept for the backward pass and the gate-response dumps.
pub struct DmcTrace<S> {
    msraw_rgb: Tensor<S>,
    mstrace_rgb: MsConvTrace<S>,
    pub ms_rgb: Tensor<S>,
    msraw_t: Tensor<S>,
    mstrace_t: MsConvTrace<S>,
    pub ms_t: Tensor<S>,
    pub a1: Tensor<S>,
    pub a3: Tensor<S>,
    pub scaled_t2r: Tensor<S>,
    pub scaled_r2t: Tensor<S>,
    pub g2: Tensor<S>,
    pub g4: Tensor<S>,
    mode: GateMode,
}

impl<S: Scalar> DmcTrace<S> {
    /// The four gate response maps, named, for the debug image dump.
    pub fn gate_responses(&self) -> [(&'static str, &Tensor<S>); 4] {
        [
            ("g1_cond_rgb", &self.a1),
            ("g2_shift_t", &self.g2),
            ("g3_cond_t", &self.a3),
            ("g4_shift_rgb", &self.g4),
        ]
    }
}

/// Standalone gate evaluation: `sigma(conv1x1(f))`. Preserves shape;
/// every output element is strictly inside (0, 1).
pub fn gate<S: Scalar>(g: &ConvLayer<S>, f: &Tensor<S>) -> Tensor<S> {
    assert_eq!(g.kernel(), 1, "gates are 1x1 convolutions");
    assert_eq!(g.in_channels(), g.out_channels(), "gates preserve channels");
    sigmoid_forward(&conv2d_forward(g, f))
}

/// Standalone multi-scale condition: `fuse(msconv(f))` (the full condition
/// pipeline including the channel-reducing fusion conv).
pub fn msconv<S: Scalar>(ms: &MsConv<S>, fuse: &ConvLayer<S>, f: &Tensor<S>) -> Tensor<S> {
    let (raw, _) = ms.forward(f);
    conv2d_forward(fuse, &raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_t(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.normal() * 0.7).collect())
    }

    fn randomize(block: &mut DmcBlock<f64>, rng: &mut Rng) {
        block.visit_mut("p", &mut |_, t| {
            for v in t.data_mut() {
                *v = rng.normal() * 0.2;
            }
        });
    }

    #[test]
    fn zero_params_literal_closed_form() {
        let block = DmcBlock::<f64>::zeros(1, 4);
        let mut rng = Rng::new(2);
        let f_r = rand_t(&[2, 4, 5, 5], &mut rng);
        let f_t = rand_t(&[2, 4, 5, 5], &mut rng);
        let (out_r, out_t, _) = block.forward(&f_r, &f_t, GateMode::Literal);
        for i in 0..f_r.len() {
            let want_t = 0.5 * f_t.data()[i] + 0.5;
            let want_r = 0.5 * f_r.data()[i] + 0.5;
            assert!((out_t.data()[i] - want_t).abs() <= 1e-6);
            assert!((out_r.data()[i] - want_r).abs() <= 1e-6);
        }
    }

    #[test]
    fn zero_params_gated_residual_closed_form() {
        let block = DmcBlock::<f64>::zeros(2, 8);
        let mut rng = Rng::new(3);
        let f_r = rand_t(&[1, 8, 5, 5], &mut rng);
        let f_t = rand_t(&[1, 8, 5, 5], &mut rng);
        let (out_r, out_t, _) = block.forward(&f_r, &f_t, GateMode::GatedResidual);
        for i in 0..f_r.len() {
            let want_t = 0.5 * f_t.data()[i] + 0.25 * f_r.data()[i];
            let want_r = 0.5 * f_r.data()[i] + 0.25 * f_t.data()[i];
            assert!((out_t.data()[i] - want_t).abs() <= 1e-6);
            assert!((out_r.data()[i] - want_r).abs() <= 1e-6);
        }
    }

    #[test]
    fn role_swap_exchanges_outputs_bit_exactly() {
        let mut rng = Rng::new(4);
        for mode in [GateMode::Literal, GateMode::GatedResidual] {
            let mut block = DmcBlock::<f64>::zeros(1, 3);
            randomize(&mut block, &mut rng);
            let f_r = rand_t(&[1, 3, 6, 6], &mut rng);
            let f_t = rand_t(&[1, 3, 6, 6], &mut rng);
            let (out_r, out_t, _) = block.forward(&f_r, &f_t, mode);
            let swapped = block.swapped_roles();
            let (sout_r, sout_t, _) = swapped.forward(&f_t, &f_r, mode);
            assert_eq!(out_r.data(), sout_t.data(), "mode {mode:?}");
            assert_eq!(out_t.data(), sout_r.data(), "mode {mode:?}");
        }
    }

    #[test]
    fn identity_branch_with_selecting_fusion_is_identity() {
        // 1x1 branch = identity, other branches zero, fusion selects the
        // first quarter of channels with unit weights.
        let c = 3;
        let mut block = DmcBlock::<f64>::zeros(1, c);
        if let MsConv::MultiBranch { b1x1, .. } = &mut block.msconv_rgb {
            for ch in 0..c {
                // weight[ch, ch, 0, 0] = 1
                b1x1.weight.data_mut()[ch * c + ch] = 1.0;
            }
        }
        for ch in 0..c {
            // fuse weight [c, 4c, 1, 1]: select branch 0 channel ch.
            block.fuse_rgb.weight.data_mut()[ch * (4 * c) + ch] = 1.0;
        }
        let mut rng = Rng::new(5);
        let f = rand_t(&[1, c, 4, 4], &mut rng);
        let ms = msconv(&block.msconv_rgb, &block.fuse_rgb, &f);
        for i in 0..f.len() {
            assert!((ms.data()[i] - f.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn msconv_preserves_spatial_shape_at_all_levels() {
        let mut rng = Rng::new(6);
        for (level, c, hw) in [(1usize, 4usize, 9usize), (2, 8, 5), (3, 8, 3)] {
            let block = DmcBlock::<f64>::zeros(level, c);
            let f = rand_t(&[1, c, hw, hw], &mut rng);
            let ms = msconv(&block.msconv_rgb, &block.fuse_rgb, &f);
            assert_eq!(ms.shape(), f.shape(), "level {level}");
        }
    }

    #[test]
    fn msconv_level1_at_full_width() {
        // Padding arithmetic oracle per branch at the deployment size:
        // kernels 1/3/3d2/5 with paddings 0/1/2/2 all map 25 -> 25.
        for (k, p, d) in [(1usize, 0usize, 1usize), (3, 1, 1), (3, 2, 2), (5, 2, 1)] {
            assert_eq!(crate::nn::conv2d_output_size(25, k, 1, p, d), 25);
        }
        let block = DmcBlock::<f32>::zeros(1, 96);
        let f = Tensor::filled(&[1, 96, 25, 25], 0.25f32);
        let ms = msconv(&block.msconv_rgb, &block.fuse_rgb, &f);
        assert_eq!(ms.shape(), &[1, 96, 25, 25]);
    }

    #[test]
    fn gate_outputs_stay_in_open_unit_interval() {
        let mut rng = Rng::new(7);
        let mut g = ConvLayer::<f64>::new(4, 4, 1, 1, 0);
        for v in g.weight.data_mut() {
            *v = rng.normal() * 3.0;
        }
        for v in g.bias.data_mut() {
            *v = rng.normal() * 3.0;
        }
        let f = rand_t(&[2, 4, 5, 5], &mut rng);
        let y = gate(&g, &f);
        for &v in y.data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn large_bias_saturates_toward_one() {
        let mut g = ConvLayer::<f64>::new(2, 2, 1, 1, 0);
        for v in g.bias.data_mut() {
            *v = 20.0;
        }
        let f = Tensor::zeros(&[1, 2, 3, 3]);
        let y = gate(&g, &f);
        // Scalar oracle: sigma(20).
        let sigma20 = 1.0 / (1.0 + (-20.0f64).exp());
        for &v in y.data() {
            assert!((v - 1.0).abs() < 1e-6);
            assert!((v - sigma20).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_gate_scales_perturbations_linearly() {
        // With the gates frozen to a constant mask m, an additive
        // perturbation delta on the multiplicative path contributes
        // exactly m * delta to the output.
        let c = 2;
        let block = DmcBlock::<f64>::zeros(1, c); // all gates constant 0.5
        let mut rng = Rng::new(8);
        let f_r = rand_t(&[1, c, 4, 4], &mut rng);
        let f_t = rand_t(&[1, c, 4, 4], &mut rng);
        let delta = rand_t(&[1, c, 4, 4], &mut rng);
        let (_, out_t, _) = block.forward(&f_r, &f_t, GateMode::Literal);
        let mut f_t2 = f_t.clone();
        f_t2.add_assign(&delta);
        let (_, out_t2, _) = block.forward(&f_r, &f_t2, GateMode::Literal);
        for i in 0..out_t.len() {
            let contribution = out_t2.data()[i] - out_t.data()[i];
            assert!((contribution - 0.5 * delta.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(9);
        for (mode, level, c, hw) in [
            (GateMode::Literal, 1usize, 4usize, 5usize),
            (GateMode::GatedResidual, 2, 4, 5),
        ] {
            let mut block = DmcBlock::<f64>::zeros(level, c);
            randomize(&mut block, &mut rng);
            let f_r = rand_t(&[1, c, hw, hw], &mut rng);
            let f_t = rand_t(&[1, c, hw, hw], &mut rng);
            let w_r = rand_t(&[1, c, hw, hw], &mut rng);
            let w_t = rand_t(&[1, c, hw, hw], &mut rng);
            let loss = |b: &DmcBlock<f64>, fr: &Tensor<f64>, ft: &Tensor<f64>| -> f64 {
                let (or, ot, _) = b.forward(fr, ft, mode);
                or.iter().zip(w_r.iter()).map(|(a, b)| a * b).sum::<f64>()
                    + ot.iter().zip(w_t.iter()).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, _, trace) = block.forward(&f_r, &f_t, mode);
            let mut grads = GradStore::new();
            let (d_fr, d_ft) =
                block.backward(&f_r, &f_t, &trace, &w_r, &w_t, "dmc", &mut grads);
            let eps = 1e-6;
            // Inputs.
            for idx in [0usize, 13, 37, 77] {
                let mut p = f_r.clone();
                p.data_mut()[idx] += eps;
                let mut m = f_r.clone();
                m.data_mut()[idx] -= eps;
                let fd = (loss(&block, &p, &f_t) - loss(&block, &m, &f_t)) / (2.0 * eps);
                let an = d_fr.data()[idx];
                assert!(
                    (fd - an).abs() / fd.abs().max(1.0) < 1e-4,
                    "{mode:?} d_fr[{idx}]: {fd} vs {an}"
                );
                let mut p = f_t.clone();
                p.data_mut()[idx] += eps;
                let mut m = f_t.clone();
                m.data_mut()[idx] -= eps;
                let fd = (loss(&block, &f_r, &p) - loss(&block, &f_r, &m)) / (2.0 * eps);
                let an = d_ft.data()[idx];
                assert!(
                    (fd - an).abs() / fd.abs().max(1.0) < 1e-4,
                    "{mode:?} d_ft[{idx}]: {fd} vs {an}"
                );
            }
            // Every parameter tensor, spot-checked at a few coordinates.
            let mut names = Vec::new();
            block.visit("dmc", &mut |n, _| names.push(n));
            for name in names {
                let g = grads.get(&name).unwrap_or_else(|| panic!("no grad for {name}"));
                let len = g.len();
                for &idx in &[0usize, len / 2, len - 1] {
                    let mut bp = block.clone();
                    bp.visit_mut("dmc", &mut |n, t| {
                        if n == name {
                            t.data_mut()[idx] += eps;
                        }
                    });
                    let mut bm = block.clone();
                    bm.visit_mut("dmc", &mut |n, t| {
                        if n == name {
                            t.data_mut()[idx] -= eps;
                        }
                    });
                    let fd = (loss(&bp, &f_r, &f_t) - loss(&bm, &f_r, &f_t)) / (2.0 * eps);
                    let an = g.data()[idx];
                    assert!(
                        (fd - an).abs() / fd.abs().max(1.0) < 1e-4,
                        "{mode:?} {name}[{idx}]: fd {fd} vs {an}"
                    );
                }
            }
        }
    }
}
