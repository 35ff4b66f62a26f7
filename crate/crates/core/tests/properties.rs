//! Property tests for the geometric and gating invariants.

use dmcnet_core::dmc::{gate, DmcBlock, GateMode};
use dmcnet_core::eval::{precision_rate, success_rate_auc};
use dmcnet_core::geometry::{iou, BoundingBox, GaussianSampler, CandidateState, ImageBounds};
use dmcnet_core::motion::{detect, Displacement};
use dmcnet_core::nn::ConvLayer;
use dmcnet_core::rng::Rng;
use dmcnet_core::tensor::Tensor;
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (
        -50.0f64..150.0,
        -50.0f64..150.0,
        0.5f64..80.0,
        0.5f64..80.0,
    )
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h))
}

proptest! {
    #[test]
    fn iou_is_symmetric_bounded_and_reflexive(a in arb_box(), b in arb_box()) {
        let ab = iou(&a, &b);
        let ba = iou(&b, &a);
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn gate_output_stays_in_open_unit_interval(
        seed in 0u64..1000,
        weight_scale in 0.0f64..8.0,
        bias in -30.0f64..30.0,
    ) {
        let mut rng = Rng::new(seed);
        let c = 3;
        let mut g = ConvLayer::<f64>::new(c, c, 1, 1, 0);
        for v in g.weight.data_mut() {
            *v = rng.normal() * weight_scale;
        }
        for v in g.bias.data_mut() {
            *v = bias;
        }
        let f = Tensor::from_vec(
            &[1, c, 4, 4],
            (0..c * 16).map(|_| rng.normal() * 4.0).collect(),
        );
        let y = gate(&g, &f);
        for &v in y.data() {
            prop_assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn dmc_outputs_preserve_shape_and_swap_exactly(
        seed in 0u64..500,
        level in 1usize..=3,
        literal in any::<bool>(),
    ) {
        let mode = if literal { GateMode::Literal } else { GateMode::GatedResidual };
        let c = 4;
        let hw = [7, 5, 3][level - 1];
        let mut rng = Rng::new(seed);
        let mut block = DmcBlock::<f64>::zeros(level, c);
        block.visit_mut("p", &mut |_, t| {
            for v in t.data_mut() {
                *v = rng.normal() * 0.5;
            }
        });
        let f_r = Tensor::from_vec(&[1, c, hw, hw], (0..c * hw * hw).map(|_| rng.normal()).collect());
        let f_t = Tensor::from_vec(&[1, c, hw, hw], (0..c * hw * hw).map(|_| rng.normal()).collect());
        let (out_r, out_t, _) = block.forward(&f_r, &f_t, mode);
        prop_assert_eq!(out_r.shape(), f_r.shape());
        prop_assert_eq!(out_t.shape(), f_t.shape());
        let swapped = block.swapped_roles();
        let (s_r, s_t, _) = swapped.forward(&f_t, &f_r, mode);
        prop_assert_eq!(out_r.data(), s_t.data());
        prop_assert_eq!(out_t.data(), s_r.data());
    }

    #[test]
    fn detect_trigger_iff_axis_exceeds_threshold(
        dx in -20.0f64..20.0,
        dy in -20.0f64..20.0,
        u in 0.0f64..15.0,
    ) {
        let d = Displacement { dx, dy, low_confidence: false };
        let m = detect(&d, u);
        prop_assert_eq!(m.horizontal.is_some(), dx.abs() > u);
        prop_assert_eq!(m.vertical.is_some(), dy.abs() > u);
        prop_assert_eq!(m.triggered(), m.horizontal.is_some() || m.vertical.is_some());
        if let Some(dir) = m.horizontal {
            prop_assert_eq!(dir as f64, -dx.signum());
        }
    }

    #[test]
    fn sampler_returns_exactly_n_inside_bounds(
        seed in 0u64..500,
        n in 1usize..64,
        cx in 10.0f64..300.0,
        cy in 10.0f64..220.0,
    ) {
        let sampler = GaussianSampler::default();
        let state = CandidateState { cx, cy, scale: 1.0 };
        let bounds = ImageBounds::new(320, 240);
        let mut rng = Rng::new(seed);
        let boxes = sampler.sample(&state, 24.0, 18.0, n, bounds, &mut rng).unwrap();
        prop_assert_eq!(boxes.len(), n);
        for b in boxes {
            prop_assert!(b.x >= 0.0 && b.y >= 0.0);
            prop_assert!(b.x + b.w <= 320.0 + 1e-9);
            prop_assert!(b.y + b.h <= 240.0 + 1e-9);
        }
    }

    #[test]
    fn metric_curves_are_monotone_and_bounded(seed in 0u64..300, frames in 2usize..40) {
        let mut rng = Rng::new(seed);
        let gt: Vec<BoundingBox> = (0..frames)
            .map(|_| BoundingBox::new(rng.range(0.0, 90.0), rng.range(0.0, 90.0),
                                       2.0 + rng.range(0.0, 30.0), 2.0 + rng.range(0.0, 30.0)))
            .collect();
        let pred: Vec<BoundingBox> = gt
            .iter()
            .map(|b| BoundingBox::new(b.x + rng.normal() * 12.0, b.y + rng.normal() * 12.0,
                                       (b.w * (1.0 + 0.3 * rng.normal())).max(0.5),
                                       (b.h * (1.0 + 0.3 * rng.normal())).max(0.5)))
            .collect();
        let mut last = 0.0;
        for t in 0..=50 {
            let pr = precision_rate(&pred, &gt, t as f64);
            prop_assert!((0.0..=1.0).contains(&pr));
            prop_assert!(pr + 1e-12 >= last);
            last = pr;
        }
        let (curve, auc) = success_rate_auc(&pred, &gt);
        prop_assert!((0.0..=1.0).contains(&auc));
        for w in curve.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 + 1e-12);
        }
    }
}
