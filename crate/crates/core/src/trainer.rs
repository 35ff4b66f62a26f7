//! Offline multi-domain training: one shared trunk, one binary output head
//! per training sequence, SGD with per-group learning rates.
//!
//! Each iteration picks one sequence (= one domain), samples 8 frames from
//! it, draws uniform anchors around each frame's ground truth, labels them
//! by IoU and crops the configured quota of positive and negative patch
//! pairs, then takes one SGD step on the softmax cross-entropy of that
//! domain's head. The pretrained backbone and the classifier run at one
//! learning rate; the randomly initialized adapter and mutual-condition
//! groups at a larger one.

use crate::data::RgbtSequence;
use crate::error::{Error, Result};
use crate::geometry::{crop_patch, iou, sample_uniform, UniformRange};
use crate::model::{build_network, group_of, ModelConfig, Network, ParamGroup};
use crate::nn::{softmax_cross_entropy, GradStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Training cycles; every cycle visits each sequence once in shuffled
    /// order, so total iterations = cycles * num_sequences (one iteration
    /// trains one sequence, matching the "epochs" convention of the
    /// original recipe; default 200).
    pub cycles: usize,
    /// Learning rate for the backbone and both classifier groups.
    pub lr_backbone_fc: f64,
    /// Learning rate for the adapter and mutual-condition groups.
    pub lr_adapter_dmc: f64,
    pub frames_per_batch: usize,
    pub pos_per_batch: usize,
    pub neg_per_batch: usize,
    /// When set, the positive/negative quotas apply per frame instead of
    /// per batch.
    pub quota_per_frame: bool,
    pub pos_thr: f64,
    pub neg_thr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Anchor distribution for positive candidates (tight around gt).
    pub pos_range: UniformRange,
    /// Anchor distribution for negative candidates (wide around gt).
    pub neg_range: UniformRange,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            cycles: 200,
            lr_backbone_fc: 0.001,
            lr_adapter_dmc: 0.002,
            frames_per_batch: 8,
            pos_per_batch: 32,
            neg_per_batch: 96,
            quota_per_frame: false,
            pos_thr: 0.7,
            neg_thr: 0.5,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            pos_range: UniformRange {
                trans: 0.1,
                scale_lo: 0.9,
                scale_hi: 1.1,
            },
            neg_range: UniformRange::default(),
        }
    }
}

impl TrainConfig {
    /// CPU-scale preset: fewer, smaller iterations, and learning rates
    /// scaled up because the desk runs start from a random backbone rather
    /// than a pretrained one.
    pub fn desk() -> Self {
        TrainConfig {
            cycles: 15,
            frames_per_batch: 4,
            pos_per_batch: 16,
            neg_per_batch: 48,
            lr_backbone_fc: 0.01,
            lr_adapter_dmc: 0.02,
            ..TrainConfig::default()
        }
    }
}

/// SGD with momentum, weight decay and a per-group learning rate.
/// Groups with a zero rate are skipped entirely, leaving their parameters
/// bit-identical.
pub struct SgdOptimizer<S> {
    velocity: BTreeMap<String, Tensor<S>>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl<S: Scalar> SgdOptimizer<S> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        SgdOptimizer {
            velocity: BTreeMap::new(),
            momentum,
            weight_decay,
        }
    }

    pub fn step(
        &mut self,
        net: &mut Network<S>,
        grads: &GradStore<S>,
        lr_of: &dyn Fn(ParamGroup) -> f64,
    ) {
        let mu = S::cast(self.momentum);
        let wd = S::cast(self.weight_decay);
        let velocity = &mut self.velocity;
        net.visit_params_mut(&mut |name, param| {
            let lr = lr_of(group_of(&name));
            if lr == 0.0 {
                return;
            }
            let Some(grad) = grads.get(&name) else {
                return;
            };
            let v = velocity
                .entry(name)
                .or_insert_with(|| Tensor::zeros_like(param));
            let lr = S::cast(lr);
            for ((v, &g), p) in v
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(param.data_mut())
            {
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            }
        });
    }
}

/// One cropped training batch: patch pairs plus labels.
pub struct MiniBatch<S> {
    pub rgb: Tensor<S>,
    pub t: Tensor<S>,
    pub labels: Vec<bool>,
}

/// Sample frames (with replacement when the sequence is shorter than the
/// quota), draw uniform anchors around each frame's ground truth, label by
/// IoU and crop patch pairs until the positive/negative quotas are filled.
pub fn build_minibatch<S: Scalar>(
    seq: &RgbtSequence,
    input_size: usize,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<MiniBatch<S>> {
    let usable: Vec<usize> = (0..seq.len())
        .filter(|&i| seq.frames[i].gt.is_some())
        .collect();
    if usable.is_empty() {
        return Err(Error::Training(format!(
            "sequence {} has no annotated frames",
            seq.name
        )));
    }
    let n_frames = config.frames_per_batch.max(1);
    let frame_ids: Vec<usize> = if usable.len() >= n_frames {
        rng.sample_indices(usable.len(), n_frames)
            .into_iter()
            .map(|i| usable[i])
            .collect()
    } else {
        (0..n_frames)
            .map(|_| usable[rng.below(usable.len())])
            .collect()
    };

    let (pos_total, neg_total) = if config.quota_per_frame {
        (
            config.pos_per_batch * n_frames,
            config.neg_per_batch * n_frames,
        )
    } else {
        (config.pos_per_batch, config.neg_per_batch)
    };

    let mut rgb_patches = Vec::with_capacity(pos_total + neg_total);
    let mut t_patches = Vec::with_capacity(pos_total + neg_total);
    let mut labels = Vec::with_capacity(pos_total + neg_total);

    let fill = |want: usize,
                    positive: bool,
                    rgb_patches: &mut Vec<Tensor<S>>,
                    t_patches: &mut Vec<Tensor<S>>,
                    labels: &mut Vec<bool>,
                    rng: &mut Rng|
     -> Result<()> {
        let mut collected = 0usize;
        let mut rounds = 0usize;
        while collected < want {
            rounds += 1;
            if rounds > 200 {
                return Err(Error::Training(format!(
                    "sequence {}: could not fill {} {} samples (IoU thresholds \
                     {:.2}/{:.2} unreachable from the configured anchor ranges)",
                    seq.name,
                    want,
                    if positive { "positive" } else { "negative" },
                    config.pos_thr,
                    config.neg_thr
                )));
            }
            for &fi in &frame_ids {
                if collected >= want {
                    break;
                }
                let frame = &seq.frames[fi];
                let gt = frame.gt.expect("filtered to annotated frames");
                let range = if positive {
                    config.pos_range
                } else {
                    config.neg_range
                };
                let anchors = sample_uniform(&gt, 4, range, frame.bounds(), rng)?;
                for a in anchors {
                    if collected >= want {
                        break;
                    }
                    let v = iou(&a, &gt);
                    let ok = if positive {
                        v >= config.pos_thr
                    } else {
                        v <= config.neg_thr
                    };
                    if !ok {
                        continue;
                    }
                    rgb_patches.push(crop_patch(&frame.rgb, &a, input_size, 0.0)?);
                    t_patches.push(crop_patch(&frame.thermal, &a, input_size, 0.0)?);
                    labels.push(positive);
                    collected += 1;
                }
            }
        }
        Ok(())
    };

    fill(pos_total, true, &mut rgb_patches, &mut t_patches, &mut labels, rng)?;
    fill(neg_total, false, &mut rgb_patches, &mut t_patches, &mut labels, rng)?;

    Ok(MiniBatch {
        rgb: Tensor::stack(&rgb_patches),
        t: Tensor::stack(&t_patches),
        labels,
    })
}

/// Mean binary softmax cross-entropy of a scored batch.
pub fn loss<S: Scalar>(logits: &Tensor<S>, labels: &[bool]) -> S {
    softmax_cross_entropy(logits, labels).0
}

#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub domain: usize,
    pub loss: f64,
}

/// Offline training entry point. Returns the trained network (all domain
/// heads still attached; strip them at export) and the per-iteration log.
pub fn train<S: Scalar>(
    dataset: &[RgbtSequence],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(Network<S>, Vec<TrainLogRow>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    let mut net: Network<S> = build_network(model_config, dataset.len())?;
    let log = train_in_place(&mut net, dataset, config)?;
    Ok((net, log))
}

/// Train an already-built network (domain head count must match).
pub fn train_in_place<S: Scalar>(
    net: &mut Network<S>,
    dataset: &[RgbtSequence],
    config: &TrainConfig,
) -> Result<Vec<TrainLogRow>> {
    if dataset.len() != net.num_domains() {
        return Err(Error::InvalidArgument(format!(
            "network has {} domain heads for {} sequences",
            net.num_domains(),
            dataset.len()
        )));
    }
    let mut rng = Rng::new(config.seed ^ 0x7472_6169_6e00_0000_u64);
    let mut opt = SgdOptimizer::new(config.momentum, config.weight_decay);
    let lr_backbone_fc = config.lr_backbone_fc;
    let lr_adapter_dmc = config.lr_adapter_dmc;
    let lr_of = move |g: ParamGroup| -> f64 {
        match g {
            ParamGroup::Backbone | ParamGroup::FcShared | ParamGroup::FcDomain => lr_backbone_fc,
            ParamGroup::Adapter | ParamGroup::Dmc => lr_adapter_dmc,
        }
    };
    let use_dmc = net.config.dmc_enabled;
    let input_size = net.config.input_size;
    let mut log = Vec::with_capacity(config.cycles * dataset.len());
    let mut iteration = 0usize;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _cycle in 0..config.cycles {
        rng.shuffle(&mut order);
        for &domain in &order {
            iteration += 1;
            let batch: MiniBatch<S> =
                build_minibatch(&dataset[domain], input_size, config, &mut rng)?;
            let (f_rgb, f_t, trace) = net.forward_train(&batch.rgb, &batch.t, use_dmc, &mut rng);
            let feats = Network::concat_features(&f_rgb, &f_t);
            let (logits, fc_trace) = net.fc_train(&feats, domain, &mut rng)?;
            let (loss_value, dlogits) = softmax_cross_entropy(&logits, &batch.labels);
            let (mut grads, dfeats) = net.fc_backward(&fc_trace, &dlogits);
            let (d_rgb, d_t) = Network::split_feature_grad(&dfeats, f_rgb.shape());
            grads.merge(net.backward_features(&trace, &d_rgb, &d_t));
            opt.step(net, &grads, &lr_of);
            log.push(TrainLogRow {
                iteration,
                domain,
                loss: loss_value.as_f64(),
            });
        }
    }
    Ok(log)
}

/// Write the training log as CSV (`iteration,domain,loss`).
pub fn write_log_csv(path: &std::path::Path, log: &[TrainLogRow]) -> Result<()> {
    let mut out = String::from("iteration,domain,loss\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{:.6}\n",
            row.iteration, row.domain, row.loss
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FramePair, ImageBuf};
    use crate::geometry::BoundingBox;
    use std::collections::BTreeSet;

    /// A tiny synthetic sequence drawn directly into buffers: bright
    /// textured square target on a darker textured background.
    fn toy_sequence(name: &str, seed: u64, frames: usize) -> RgbtSequence {
        let mut rng = Rng::new(seed);
        let (w, h) = (160usize, 120usize);
        let mut out = Vec::new();
        for f in 0..frames {
            let mut rgb = ImageBuf::new(w, h);
            let mut thermal = ImageBuf::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let v = 40 + ((x * 3 + y * 5 + f * 2) % 32) as u8;
                    for c in 0..3 {
                        rgb.set(x, y, c, v + (rng.below(8) as u8));
                        thermal.set(x, y, c, 30 + ((x + y) % 16) as u8);
                    }
                }
            }
            let bx = 40 + f * 2;
            let by = 30 + f;
            for y in by..by + 24 {
                for x in bx..bx + 24 {
                    let v = 180 + ((x ^ y) % 64) as u8;
                    for c in 0..3 {
                        rgb.set(x, y, c, v);
                        thermal.set(x, y, c, 220);
                    }
                }
            }
            out.push(FramePair {
                rgb,
                thermal,
                gt: Some(BoundingBox::new(bx as f64, by as f64, 24.0, 24.0)),
            });
        }
        RgbtSequence {
            name: name.into(),
            frames: out,
            attributes: BTreeSet::new(),
        }
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            backbone_channels: [4, 6, 8],
            fc_dim: 12,
            dropout: 0.0,
            init_seed: 1,
            ..ModelConfig::default()
        }
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            cycles: 2,
            frames_per_batch: 3,
            pos_per_batch: 8,
            neg_per_batch: 16,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn minibatch_has_exact_quota() {
        let seq = toy_sequence("toy", 3, 6);
        let cfg = tiny_train();
        let mut rng = Rng::new(7);
        let batch: MiniBatch<f32> = build_minibatch(&seq, 107, &cfg, &mut rng).unwrap();
        assert_eq!(batch.labels.len(), 24);
        assert_eq!(batch.labels.iter().filter(|&&l| l).count(), 8);
        assert_eq!(batch.rgb.shape(), &[24, 3, 107, 107]);
        assert_eq!(batch.t.shape(), &[24, 3, 107, 107]);
    }

    #[test]
    fn minibatch_is_seed_deterministic() {
        let seq = toy_sequence("toy", 5, 5);
        let cfg = tiny_train();
        let a: MiniBatch<f32> = build_minibatch(&seq, 107, &cfg, &mut Rng::new(9)).unwrap();
        let b: MiniBatch<f32> = build_minibatch(&seq, 107, &cfg, &mut Rng::new(9)).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.rgb.data(), b.rgb.data());
    }

    #[test]
    fn short_sequence_samples_with_replacement() {
        let seq = toy_sequence("short", 6, 2);
        let cfg = TrainConfig {
            frames_per_batch: 8,
            pos_per_batch: 4,
            neg_per_batch: 4,
            ..tiny_train()
        };
        let batch: MiniBatch<f32> = build_minibatch(&seq, 107, &cfg, &mut Rng::new(2)).unwrap();
        assert_eq!(batch.labels.len(), 8);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let r: Result<(Network<f32>, Vec<TrainLogRow>)> = train(&[], &tiny_model(), &tiny_train());
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn training_decreases_loss_on_toy_dataset() {
        // From-scratch toy run: no pretrained backbone, so the rates are
        // scaled up from the fine-tuning defaults.
        let dataset = vec![toy_sequence("a", 21, 5), toy_sequence("b", 22, 5)];
        let cfg = TrainConfig {
            cycles: 30,
            frames_per_batch: 2,
            pos_per_batch: 8,
            neg_per_batch: 16,
            lr_backbone_fc: 0.01,
            lr_adapter_dmc: 0.02,
            seed: 3,
            ..TrainConfig::default()
        };
        let (_, log) = train::<f32>(&dataset, &tiny_model(), &cfg).unwrap();
        assert_eq!(log.len(), 60);
        let head: f64 = log[..10].iter().map(|r| r.loss).sum::<f64>() / 10.0;
        let tail: f64 = log[log.len() - 10..].iter().map(|r| r.loss).sum::<f64>() / 10.0;
        assert!(
            tail <= head * 0.5,
            "smoothed loss did not halve: head {head:.4} tail {tail:.4}"
        );
    }

    #[test]
    fn zero_rate_groups_stay_bit_identical() {
        let dataset = vec![toy_sequence("a", 31, 4)];
        let mut net: Network<f32> = build_network(&tiny_model(), 1).unwrap();
        let mut before = BTreeMap::new();
        net.visit_params(&mut |n, t| {
            before.insert(n, t.data().to_vec());
        });
        let cfg = TrainConfig {
            cycles: 2,
            frames_per_batch: 2,
            pos_per_batch: 4,
            neg_per_batch: 8,
            lr_backbone_fc: 0.0,
            lr_adapter_dmc: 0.01,
            ..tiny_train()
        };
        train_in_place(&mut net, &dataset, &cfg).unwrap();
        let mut changed_frozen = 0;
        let mut changed_live = 0;
        net.visit_params(&mut |n, t| {
            let same = before[&n] == t.data();
            match group_of(&n) {
                ParamGroup::Backbone | ParamGroup::FcShared | ParamGroup::FcDomain => {
                    if !same {
                        changed_frozen += 1;
                    }
                }
                ParamGroup::Adapter | ParamGroup::Dmc => {
                    if !same {
                        changed_live += 1;
                    }
                }
            }
        });
        assert_eq!(changed_frozen, 0, "frozen groups moved");
        assert!(changed_live > 0, "live groups never moved");
    }

    #[test]
    fn domain_gradients_touch_only_their_head() {
        let dataset = vec![toy_sequence("a", 41, 4), toy_sequence("b", 42, 4)];
        let mut net: Network<f32> = build_network(&tiny_model(), 2).unwrap();
        let cfg = tiny_train();
        let mut rng = Rng::new(4);
        let batch: MiniBatch<f32> = build_minibatch(&dataset[0], 107, &cfg, &mut rng).unwrap();
        let (f_rgb, f_t, _trace) = net.forward_train(&batch.rgb, &batch.t, true, &mut rng);
        let feats = Network::concat_features(&f_rgb, &f_t);
        let (logits, fc_trace) = net.fc_train(&feats, 0, &mut rng).unwrap();
        let (_, dlogits) = softmax_cross_entropy(&logits, &batch.labels);
        let (grads, _) = net.fc_backward(&fc_trace, &dlogits);
        assert!(grads.get("fc6.0.weight").is_some());
        assert!(grads.get("fc6.1.weight").is_none());
    }

    #[test]
    fn learning_rate_map_covers_every_group() {
        let net: Network<f32> = build_network(&tiny_model(), 1).unwrap();
        let mut seen: BTreeSet<&'static str> = BTreeSet::new();
        net.visit_params(&mut |name, _| {
            seen.insert(group_of(&name).name());
        });
        assert_eq!(seen.len(), ParamGroup::ALL.len());
    }
}
