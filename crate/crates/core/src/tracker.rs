//! Online tracking: first-frame fine-tuning, per-frame candidate scoring
//! with top-5 aggregation, reliability-gated camera-motion re-sampling and
//! short/long-term model updates.
//!
//! Per frame:
//!
//! 1. draw Gaussian candidates around the previous state and score them;
//! 2. the tracking result is the mean of the five best candidates, with
//!    score `F` = mean of their positive logits;
//! 3. `F > 0`: refine by bounding-box regression, collect new training
//!    samples into the short- and long-term memories;
//! 4. `F <= 0`: estimate the mean displacement over the local region
//!    (optical flow runs only now); if an axis exceeds the threshold `u`,
//!    score 16 directional re-samples and keep whichever of the two
//!    results scores higher; otherwise run a short-term update;
//! 5. every 10th frame, run a long-term update.
//!
//! The scoring/fine-tuning backend is the [`ScoreModel`] trait so the
//! branch logic can be driven by scripted scores in tests; the production
//! implementation is [`NetworkModel`].

use crate::data::{FramePair, GrayImage};
use crate::error::{Error, Result};
use crate::geometry::{
    apply_bbox_regression, crop_patch, iou, sample_global, sample_uniform, train_bbox_regressor,
    BboxRegressor, BoundingBox, CandidateState, GaussianSampler, ImageBounds, UniformRange,
};
use crate::model::{Network, ParamGroup};
use crate::motion::{detect, local_region, mean_displacement, FlowEstimator, MotionDecision};
use crate::nn::softmax_cross_entropy;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::SgdOptimizer;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Gaussian candidates per frame.
    pub n_candidates: usize,
    /// Top candidates averaged into the frame result.
    pub top_k: usize,
    /// First-frame sample counts and fine-tuning schedule.
    pub init_pos: usize,
    pub init_neg: usize,
    pub init_iters: usize,
    pub lr_init_fc: f64,
    pub lr_init_head: f64,
    /// Online update schedule.
    pub update_iters: usize,
    pub lr_update_fc: f64,
    pub lr_update_head: f64,
    /// Mini-batch drawn from memory per fine-tuning iteration.
    pub batch_pos: usize,
    pub batch_neg: usize,
    /// IoU labeling thresholds: first frame and update frames.
    pub init_pos_thr: f64,
    pub init_neg_thr: f64,
    pub update_pos_thr: f64,
    pub update_neg_thr: f64,
    /// Per-frame sample quotas appended to the memories.
    pub mem_pos_per_frame: usize,
    pub mem_neg_per_frame: usize,
    /// Memory capacities in frames, oldest evicted first.
    pub short_mem_frames: usize,
    pub long_mem_frames: usize,
    /// Long-term update cadence (frames).
    pub long_interval: usize,
    /// Camera-motion threshold `u` in pixels.
    pub u_threshold: f64,
    /// Component switches.
    pub use_dmc: bool,
    pub use_resample: bool,
    /// Candidate distribution (variances from the tracking recipe).
    pub gaussian: GaussianSampler,
    /// Tight distribution for positive training samples.
    pub pos_sampler: GaussianSampler,
    /// Wide uniform range for negative training samples.
    pub neg_range: UniformRange,
    /// Bounding-box regression: minimum IoU of training samples and ridge
    /// regularization strength.
    pub bbreg_iou_min: f64,
    pub bbreg_lambda: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Scoring chunk size (bounds peak memory; also the rayon work unit).
    pub chunk: usize,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            n_candidates: 256,
            top_k: 5,
            init_pos: 500,
            init_neg: 5000,
            init_iters: 50,
            lr_init_fc: 0.0005,
            lr_init_head: 0.005,
            update_iters: 10,
            lr_update_fc: 0.001,
            lr_update_head: 0.01,
            batch_pos: 32,
            batch_neg: 96,
            init_pos_thr: 0.7,
            init_neg_thr: 0.5,
            update_pos_thr: 0.7,
            update_neg_thr: 0.3,
            mem_pos_per_frame: 50,
            mem_neg_per_frame: 200,
            short_mem_frames: 20,
            long_mem_frames: 100,
            long_interval: 10,
            u_threshold: 5.0,
            use_dmc: true,
            use_resample: true,
            gaussian: GaussianSampler::default(),
            pos_sampler: GaussianSampler {
                trans_sigma: 0.1,
                scale_sigma: 0.2,
                scale_base: 1.05,
            },
            neg_range: UniformRange::default(),
            bbreg_iou_min: 0.6,
            bbreg_lambda: 1000.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            chunk: 32,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    /// Reduced sample counts for CPU-scale runs; the algorithm and all
    /// thresholds are unchanged.
    pub fn desk() -> Self {
        TrackerConfig {
            n_candidates: 96,
            init_pos: 100,
            init_neg: 500,
            init_iters: 20,
            update_iters: 6,
            batch_pos: 16,
            batch_neg: 48,
            mem_pos_per_frame: 12,
            mem_neg_per_frame: 36,
            ..TrackerConfig::default()
        }
    }
}

/// One frame's outcome. `score` is `F` (mean of the top-5 positive logits
/// of the Gaussian candidates); `resample_score` is `RF` when re-sampling
/// ran. The reported final score is their maximum.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub frame_index: usize,
    pub bbox: BoundingBox,
    pub score: f64,
    pub resample_score: Option<f64>,
    pub used_resampling: bool,
}

impl StepResult {
    pub fn final_score(&self) -> f64 {
        match self.resample_score {
            Some(rf) => self.score.max(rf),
            None => self.score,
        }
    }
}

/// Scoring and fine-tuning backend used by the tracker.
pub trait ScoreModel<S: Scalar> {
    /// Classifier-input features (`[n, D]`) for boxes cropped from a frame.
    fn extract_features(&self, frame: &FramePair, boxes: &[BoundingBox]) -> Result<Tensor<S>>;

    /// `(pos, neg)` logits per feature row.
    fn score_pairs(&self, feats: &Tensor<S>) -> Result<Vec<(f64, f64)>>;

    /// Positive logits per feature row.
    fn scores(&self, feats: &Tensor<S>) -> Result<Vec<f64>> {
        Ok(self.score_pairs(feats)?.into_iter().map(|p| p.0).collect())
    }

    /// Fine-tune the classifier on cached features.
    fn finetune(
        &mut self,
        pos: &Tensor<S>,
        neg: &Tensor<S>,
        iters: usize,
        lr_fc: f64,
        lr_head: f64,
        rng: &mut Rng,
    ) -> Result<()>;
}

/// Production backend: the convolutional trunk is frozen; features are
/// level-3 maps of both modalities, concatenated and flattened; only the
/// fully connected layers move during fine-tuning.
pub struct NetworkModel<S: Scalar> {
    pub net: Network<S>,
    pub use_dmc: bool,
    chunk: usize,
    batch_pos: usize,
    batch_neg: usize,
    momentum: f64,
    weight_decay: f64,
}

impl<S: Scalar> NetworkModel<S> {
    /// Wrap a trained trunk for one sequence: the domain heads are replaced
    /// by a single freshly initialized head.
    pub fn for_sequence(mut net: Network<S>, config: &TrackerConfig, rng: &mut Rng) -> Self {
        net.reset_domain_head(rng);
        net.reset_dmc_count();
        NetworkModel {
            use_dmc: config.use_dmc && net.config.dmc_enabled,
            net,
            chunk: config.chunk.max(1),
            batch_pos: config.batch_pos,
            batch_neg: config.batch_neg,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
        }
    }
}

impl<S: Scalar> ScoreModel<S> for NetworkModel<S> {
    fn extract_features(&self, frame: &FramePair, boxes: &[BoundingBox]) -> Result<Tensor<S>> {
        let size = self.net.config.input_size;
        let dim = self
            .net
            .config
            .feature_dim()
            .expect("config validated at build");
        let n = boxes.len();
        let mut out = Tensor::zeros(&[n, dim]);
        let chunks: Vec<(usize, &[BoundingBox])> = boxes
            .chunks(self.chunk)
            .enumerate()
            .map(|(i, c)| (i * self.chunk, c))
            .collect();
        // Each chunk writes a disjoint slice of `out`, so the parallel map
        // is deterministic.
        let results: Vec<(usize, Result<Tensor<S>>)> = chunks
            .into_par_iter()
            .map(|(offset, chunk_boxes)| {
                let run = || -> Result<Tensor<S>> {
                    let mut rgb = Vec::with_capacity(chunk_boxes.len());
                    let mut t = Vec::with_capacity(chunk_boxes.len());
                    for b in chunk_boxes {
                        rgb.push(crop_patch::<S>(&frame.rgb, b, size, 0.0)?);
                        t.push(crop_patch::<S>(&frame.thermal, b, size, 0.0)?);
                    }
                    let rgb = Tensor::stack(&rgb);
                    let t = Tensor::stack(&t);
                    let (f_rgb, f_t) = self.net.forward_eval(&rgb, &t, self.use_dmc);
                    Ok(Network::concat_features(&f_rgb, &f_t))
                };
                (offset, run())
            })
            .collect();
        for (offset, r) in results {
            let feats = r?;
            let rows = feats.dim(0);
            for i in 0..rows {
                out.batch_item_mut(offset + i)
                    .copy_from_slice(feats.batch_item(i));
            }
        }
        Ok(out)
    }

    fn score_pairs(&self, feats: &Tensor<S>) -> Result<Vec<(f64, f64)>> {
        let logits = self.net.fc_eval(feats, 0)?;
        Ok((0..logits.dim(0))
            .map(|i| {
                let row = logits.batch_item(i);
                (row[1].as_f64(), row[0].as_f64())
            })
            .collect())
    }

    fn finetune(
        &mut self,
        pos: &Tensor<S>,
        neg: &Tensor<S>,
        iters: usize,
        lr_fc: f64,
        lr_head: f64,
        rng: &mut Rng,
    ) -> Result<()> {
        let n_pos = pos.dim(0);
        let n_neg = neg.dim(0);
        if n_pos == 0 || n_neg == 0 {
            return Err(Error::Training(
                "fine-tuning needs positive and negative samples".into(),
            ));
        }
        let dim = pos.dim(1);
        let mut opt = SgdOptimizer::new(self.momentum, self.weight_decay);
        let lr_of = move |g: ParamGroup| -> f64 {
            match g {
                ParamGroup::FcShared => lr_fc,
                ParamGroup::FcDomain => lr_head,
                _ => 0.0, // convolutional parameters stay frozen
            }
        };
        for _ in 0..iters {
            let pos_idx = rng.sample_indices(n_pos, self.batch_pos.min(n_pos));
            let neg_idx = rng.sample_indices(n_neg, self.batch_neg.min(n_neg));
            let nb = pos_idx.len() + neg_idx.len();
            let mut batch = Tensor::zeros(&[nb, dim]);
            let mut labels = Vec::with_capacity(nb);
            for (row, &i) in pos_idx.iter().enumerate() {
                batch.batch_item_mut(row).copy_from_slice(pos.batch_item(i));
                labels.push(true);
            }
            for (row, &i) in neg_idx.iter().enumerate() {
                batch
                    .batch_item_mut(pos_idx.len() + row)
                    .copy_from_slice(neg.batch_item(i));
                labels.push(false);
            }
            let (logits, trace) = self.net.fc_train(&batch, 0, rng)?;
            let (_, dlogits) = softmax_cross_entropy(&logits, &labels);
            let (grads, _) = self.net.fc_backward(&trace, &dlogits);
            opt.step(&mut self.net, &grads, &lr_of);
        }
        Ok(())
    }
}

/// Bounded per-frame sample store (features + labels), FIFO eviction.
pub struct SampleMemory<S> {
    frames: VecDeque<MemFrame<S>>,
    cap: usize,
}

struct MemFrame<S> {
    pos: Tensor<S>,
    neg: Tensor<S>,
}

impl<S: Scalar> SampleMemory<S> {
    pub fn new(cap: usize) -> Self {
        SampleMemory {
            frames: VecDeque::new(),
            cap: cap.max(1),
        }
    }

    pub fn len_frames(&self) -> usize {
        self.frames.len()
    }

    fn push(&mut self, pos: Tensor<S>, neg: Tensor<S>) {
        if self.frames.len() == self.cap {
            self.frames.pop_front();
        }
        self.frames.push_back(MemFrame { pos, neg });
    }

    /// Concatenate all stored samples.
    fn gather(&self) -> Option<(Tensor<S>, Tensor<S>)> {
        if self.frames.is_empty() {
            return None;
        }
        let dim = self.frames[0].pos.dim(1);
        let np: usize = self.frames.iter().map(|f| f.pos.dim(0)).sum();
        let nn: usize = self.frames.iter().map(|f| f.neg.dim(0)).sum();
        let mut pos = Tensor::zeros(&[np, dim]);
        let mut neg = Tensor::zeros(&[nn, dim]);
        let mut ip = 0;
        let mut in_ = 0;
        for f in &self.frames {
            for r in 0..f.pos.dim(0) {
                pos.batch_item_mut(ip).copy_from_slice(f.pos.batch_item(r));
                ip += 1;
            }
            for r in 0..f.neg.dim(0) {
                neg.batch_item_mut(in_).copy_from_slice(f.neg.batch_item(r));
                in_ += 1;
            }
        }
        Some((pos, neg))
    }
}

/// Counters for the wiring tests and the ablation harness.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrackerStats {
    pub flow_calls: usize,
    pub short_updates: usize,
    pub long_updates: usize,
    pub resample_events: usize,
    /// Mutual-condition block invocations over the whole run (production
    /// model only; scripted test models leave it zero).
    pub dmc_invocations: u64,
}

pub struct Tracker<S: Scalar, M: ScoreModel<S>> {
    pub config: TrackerConfig,
    pub model: M,
    flow: Box<dyn FlowEstimator>,
    regressor: Option<BboxRegressor>,
    ref_size: (f64, f64),
    state: CandidateState,
    short_mem: SampleMemory<S>,
    long_mem: SampleMemory<S>,
    frame_index: usize,
    prev_gray: GrayImage,
    rng: Rng,
    pub stats: TrackerStats,
}

/// Select the indices of the `k` highest scores, ties broken toward the
/// lower index, using a single bounded-insertion pass.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::with_capacity(k + 1);
    for (i, &s) in scores.iter().enumerate() {
        let pos = best.partition_point(|&j| scores[j] > s || (scores[j] == s && j < i));
        if pos < k {
            best.insert(pos, i);
            if best.len() > k {
                best.pop();
            }
        }
    }
    best
}

fn mean_box(boxes: &[BoundingBox]) -> BoundingBox {
    let n = boxes.len() as f64;
    BoundingBox::new(
        boxes.iter().map(|b| b.x).sum::<f64>() / n,
        boxes.iter().map(|b| b.y).sum::<f64>() / n,
        boxes.iter().map(|b| b.w).sum::<f64>() / n,
        boxes.iter().map(|b| b.h).sum::<f64>() / n,
    )
}

impl<S: Scalar, M: ScoreModel<S>> Tracker<S, M> {
    /// First-frame initialization: fine-tune the classifier on samples
    /// around the ground truth, train the bounding-box regressor, seed the
    /// memories.
    pub fn init(
        config: TrackerConfig,
        mut model: M,
        flow: Box<dyn FlowEstimator>,
        first: &FramePair,
        gt: BoundingBox,
        seed: u64,
    ) -> Result<Self> {
        let bounds = first.bounds();
        if !gt.is_valid()
            || gt.x < 0.0
            || gt.y < 0.0
            || gt.x + gt.w > bounds.width as f64
            || gt.y + gt.h > bounds.height as f64
        {
            return Err(Error::InvalidArgument(format!(
                "ground truth {gt:?} outside the {}x{} image",
                bounds.width, bounds.height
            )));
        }
        let mut rng = Rng::new(seed);
        let state = CandidateState::from_box(&gt, gt.w, gt.h);

        // Positive samples: Gaussian around gt, quota-filled by IoU.
        let pos_boxes = Self::fill_quota(
            config.init_pos,
            &mut rng,
            |rng| {
                config
                    .pos_sampler
                    .sample(&state, gt.w, gt.h, 8, bounds, rng)
            },
            |b| iou(b, &gt) >= config.init_pos_thr,
        )?;
        // Negative samples: half wide-uniform around gt, half global.
        let neg_boxes = Self::fill_quota(
            config.init_neg,
            &mut rng,
            |rng| {
                let mut v = sample_uniform(&gt, 8, config.neg_range, bounds, rng)?;
                v.extend(sample_global(bounds, 8, &gt, rng));
                Ok(v)
            },
            |b| iou(b, &gt) <= config.init_neg_thr,
        )?;

        let pos_feats = model.extract_features(first, &pos_boxes)?;
        let neg_feats = model.extract_features(first, &neg_boxes)?;
        model.finetune(
            &pos_feats,
            &neg_feats,
            config.init_iters,
            config.lr_init_fc,
            config.lr_init_head,
            &mut rng,
        )?;

        // Bounding-box regressor from first-frame positives.
        let reg_rows: Vec<usize> = (0..pos_boxes.len())
            .filter(|&i| iou(&pos_boxes[i], &gt) > config.bbreg_iou_min)
            .collect();
        let regressor = if reg_rows.len() >= 2 {
            let dim = pos_feats.dim(1);
            let mut feats = Tensor::zeros(&[reg_rows.len(), dim]);
            let mut boxes = Vec::with_capacity(reg_rows.len());
            for (r, &i) in reg_rows.iter().enumerate() {
                feats
                    .batch_item_mut(r)
                    .copy_from_slice(pos_feats.batch_item(i));
                boxes.push(pos_boxes[i]);
            }
            Some(train_bbox_regressor(
                &feats,
                &boxes,
                &gt,
                config.bbreg_lambda,
            )?)
        } else {
            None
        };

        let mut short_mem = SampleMemory::new(config.short_mem_frames);
        let mut long_mem = SampleMemory::new(config.long_mem_frames);
        short_mem.push(pos_feats.clone(), neg_feats.clone());
        long_mem.push(pos_feats, neg_feats);

        Ok(Tracker {
            config,
            model,
            flow,
            regressor,
            ref_size: (gt.w, gt.h),
            state,
            short_mem,
            long_mem,
            frame_index: 1,
            prev_gray: first.rgb.to_gray(),
            rng,
            stats: TrackerStats::default(),
        })
    }

    fn fill_quota(
        want: usize,
        rng: &mut Rng,
        mut draw: impl FnMut(&mut Rng) -> Result<Vec<BoundingBox>>,
        keep: impl Fn(&BoundingBox) -> bool,
    ) -> Result<Vec<BoundingBox>> {
        let mut out = Vec::with_capacity(want);
        let mut rounds = 0;
        while out.len() < want {
            rounds += 1;
            if rounds > want * 20 + 200 {
                return Err(Error::Training(format!(
                    "degenerate sample set: only {}/{want} samples satisfied the \
                     IoU constraint",
                    out.len()
                )));
            }
            for b in draw(rng)? {
                if out.len() >= want {
                    break;
                }
                if keep(&b) {
                    out.push(b);
                }
            }
        }
        Ok(out)
    }

    pub fn current_box(&self) -> BoundingBox {
        self.state.to_box(self.ref_size.0, self.ref_size.1)
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    /// Training accuracy of the current classifier on a labeled feature
    /// set; used by the initialization self-check.
    pub fn classifier_accuracy(&self, pos: &Tensor<S>, neg: &Tensor<S>) -> Result<f64> {
        let p = self.model.score_pairs(pos)?;
        let n = self.model.score_pairs(neg)?;
        let correct = p.iter().filter(|(pos, neg)| pos > neg).count()
            + n.iter().filter(|(pos, neg)| neg >= pos).count();
        Ok(correct as f64 / (p.len() + n.len()) as f64)
    }

    /// Accuracy on the samples currently held in the short-term memory;
    /// right after `init` this is the first-frame training set.
    pub fn training_set_accuracy(&self) -> Result<f64> {
        let (pos, neg) = self
            .short_mem
            .gather()
            .ok_or_else(|| Error::Training("empty sample memory".into()))?;
        self.classifier_accuracy(&pos, &neg)
    }

    /// Track one frame.
    pub fn step(&mut self, frame: &FramePair) -> Result<StepResult> {
        self.frame_index += 1;
        let bounds = frame.bounds();
        let prev_box = self.current_box();

        // (1) Gaussian candidates around the previous state.
        let candidates = self.config.gaussian.sample(
            &self.state,
            self.ref_size.0,
            self.ref_size.1,
            self.config.n_candidates,
            bounds,
            &mut self.rng,
        )?;
        let feats = self.model.extract_features(frame, &candidates)?;
        let scores = self.model.scores(&feats)?;

        // (2) Top-5 mean: state estimate and reliability score F.
        let top = top_k_indices(&scores, self.config.top_k);
        let f_score = top.iter().map(|&i| scores[i]).sum::<f64>() / top.len() as f64;
        let top_boxes: Vec<BoundingBox> = top.iter().map(|&i| candidates[i]).collect();
        let gaussian_box = mean_box(&top_boxes);

        let mut reported;
        let mut rf = None;
        let mut used_resampling = false;

        if f_score > 0.0 {
            // Success branch: regression refinement + memory update.
            self.state = CandidateState::from_box(&gaussian_box, self.ref_size.0, self.ref_size.1);
            reported = gaussian_box;
            if let Some(reg) = &self.regressor {
                let regressed: Vec<BoundingBox> = top
                    .iter()
                    .map(|&i| apply_bbox_regression(reg, feats.batch_item(i), &candidates[i]))
                    .collect();
                reported = mean_box(&regressed).clamp_into(bounds);
            }
            self.append_memories(frame, &gaussian_box, bounds)?;
        } else {
            // Failure branch: flow-gated re-sampling. The displacement is
            // measured from the current frame back to the previous one,
            // which makes its sign the camera-motion estimate (see the
            // motion module docs); the detector steps opposite to it.
            let decision = if self.config.use_resample {
                self.stats.flow_calls += 1;
                let region = local_region(&prev_box, bounds);
                let cur_gray = frame.rgb.to_gray();
                let disp =
                    mean_displacement(&cur_gray, &self.prev_gray, &region, self.flow.as_ref());
                detect(&disp, self.config.u_threshold)
            } else {
                MotionDecision {
                    horizontal: None,
                    vertical: None,
                }
            };
            if decision.triggered() {
                self.stats.resample_events += 1;
                let re_boxes = crate::motion::resample(&prev_box, &decision, bounds);
                let re_feats = self.model.extract_features(frame, &re_boxes)?;
                let re_scores = self.model.scores(&re_feats)?;
                let re_top = top_k_indices(&re_scores, self.config.top_k);
                let rf_score = re_scores[re_top[0]];
                rf = Some(rf_score);
                if rf_score > f_score {
                    used_resampling = true;
                    let re_top_boxes: Vec<BoundingBox> =
                        re_top.iter().map(|&i| re_boxes[i]).collect();
                    let re_box = mean_box(&re_top_boxes);
                    self.state =
                        CandidateState::from_box(&re_box, self.ref_size.0, self.ref_size.1);
                    reported = re_box;
                } else {
                    self.state =
                        CandidateState::from_box(&gaussian_box, self.ref_size.0, self.ref_size.1);
                    reported = gaussian_box;
                }
            } else {
                // No camera motion: the failure is the model's, refresh it
                // from the short-term memory.
                self.state =
                    CandidateState::from_box(&gaussian_box, self.ref_size.0, self.ref_size.1);
                reported = gaussian_box;
                self.update_short()?;
            }
        }

        // Long-term update on the fixed cadence.
        if self.frame_index % self.config.long_interval == 0 {
            self.update_long()?;
        }

        self.prev_gray = frame.rgb.to_gray();
        Ok(StepResult {
            frame_index: self.frame_index,
            bbox: reported,
            score: f_score,
            resample_score: rf,
            used_resampling,
        })
    }

    /// Collect labeled samples around the new state into both memories.
    fn append_memories(
        &mut self,
        frame: &FramePair,
        center_box: &BoundingBox,
        bounds: ImageBounds,
    ) -> Result<()> {
        let state = CandidateState::from_box(center_box, self.ref_size.0, self.ref_size.1);
        let pos = Self::fill_quota(
            self.config.mem_pos_per_frame,
            &mut self.rng,
            |rng| {
                self.config.pos_sampler.sample(
                    &state,
                    self.ref_size.0,
                    self.ref_size.1,
                    8,
                    bounds,
                    rng,
                )
            },
            |b| iou(b, center_box) >= self.config.update_pos_thr,
        )?;
        let neg = Self::fill_quota(
            self.config.mem_neg_per_frame,
            &mut self.rng,
            |rng| sample_uniform(center_box, 8, self.config.neg_range, bounds, rng),
            |b| iou(b, center_box) <= self.config.update_neg_thr,
        )?;
        let pos_feats = self.model.extract_features(frame, &pos)?;
        let neg_feats = self.model.extract_features(frame, &neg)?;
        self.short_mem.push(pos_feats.clone(), neg_feats.clone());
        self.long_mem.push(pos_feats, neg_feats);
        Ok(())
    }

    /// Refit the classifier on the short-term memory.
    pub fn update_short(&mut self) -> Result<()> {
        if let Some((pos, neg)) = self.short_mem.gather() {
            self.stats.short_updates += 1;
            self.model.finetune(
                &pos,
                &neg,
                self.config.update_iters,
                self.config.lr_update_fc,
                self.config.lr_update_head,
                &mut self.rng,
            )?;
        }
        Ok(())
    }

    /// Refit the classifier on the long-term memory.
    pub fn update_long(&mut self) -> Result<()> {
        if let Some((pos, neg)) = self.long_mem.gather() {
            self.stats.long_updates += 1;
            self.model.finetune(
                &pos,
                &neg,
                self.config.update_iters,
                self.config.lr_update_fc,
                self.config.lr_update_head,
                &mut self.rng,
            )?;
        }
        Ok(())
    }
}

/// Full-sequence run: per-frame boxes (first frame = ground truth) plus
/// step metadata and counters.
pub struct TrackRun {
    pub boxes: Vec<BoundingBox>,
    pub steps: Vec<StepResult>,
    pub stats: TrackerStats,
}

/// Track a whole sequence with the production model. The per-sequence seed
/// is derived from the base seed and the sequence name, so runs are
/// reproducible regardless of worker scheduling.
pub fn track_sequence<S: Scalar>(
    net: &Network<S>,
    seq: &crate::data::RgbtSequence,
    config: &TrackerConfig,
) -> Result<TrackRun> {
    if seq.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "sequence {} is empty",
            seq.name
        )));
    }
    let gt = seq.frames[0]
        .gt
        .ok_or_else(|| Error::InvalidArgument(format!("{}: first frame unannotated", seq.name)))?;
    let mut seq_rng = Rng::derive(config.seed, &seq.name);
    let model = NetworkModel::for_sequence(net.clone(), config, &mut seq_rng);
    let counter_base = model.net.dmc_call_count();
    let flow = Box::new(crate::motion::BlockMatchingFlow::default());
    let mut tracker = Tracker::init(
        config.clone(),
        model,
        flow,
        &seq.frames[0],
        gt,
        seq_rng.next_u64(),
    )?;
    let mut boxes = vec![gt];
    let mut steps = Vec::with_capacity(seq.len().saturating_sub(1));
    for frame in &seq.frames[1..] {
        let r = tracker.step(frame)?;
        boxes.push(r.bbox);
        steps.push(r);
    }
    let mut stats = tracker.stats;
    stats.dmc_invocations = tracker.model.net.dmc_call_count() - counter_base;
    Ok(TrackRun { boxes, steps, stats })
}

/// Write a result file: one `x,y,w,h` line per frame.
pub fn write_result_file(path: &std::path::Path, boxes: &[BoundingBox]) -> Result<()> {
    let mut out = String::new();
    for b in boxes {
        out.push_str(&format!("{:.4},{:.4},{:.4},{:.4}\n", b.x, b.y, b.w, b.h));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write the per-frame metadata sidecar (`frame,f,rf,used_resampling`).
pub fn write_metadata_file(path: &std::path::Path, steps: &[StepResult]) -> Result<()> {
    let mut out = String::from("frame,f,rf,used_resampling\n");
    for s in steps {
        let rf = s
            .resample_score
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{:.6},{},{}\n",
            s.frame_index, s.score, rf, s.used_resampling
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a result file written by [`write_result_file`].
pub fn read_result_file(path: &std::path::Path) -> Result<Vec<BoundingBox>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Load(format!(
                "{}:{}: expected x,y,w,h",
                path.display(),
                i + 1
            )));
        }
        let mut v = [0.0f64; 4];
        for (j, f) in fields.iter().enumerate() {
            v[j] = f.trim().parse().map_err(|e| {
                Error::Load(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
        }
        boxes.push(BoundingBox::new(v[0], v[1], v[2], v[3]));
    }
    Ok(boxes)
}
