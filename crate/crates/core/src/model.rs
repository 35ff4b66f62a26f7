//! The two-stream network: a modality-shared convolutional backbone,
//! per-modality adapter stacks joined to the backbone by element-wise
//! addition at every level, optional mutual-condition blocks between the
//! levels, and a three-layer classifier with one output head per training
//! domain.
//!
//! Layout at the default configuration (107x107 input):
//!
//! ```text
//! level   backbone                adapter                     joined map
//! 1    conv 7x7x96 /2 +LRN +pool  crop2, conv 3x3x96 /2 +pool  [96, 25, 25]
//! 2    conv 5x5x256 /2 +LRN +pool crop2, conv 1x1x256 /2 +pool [256, 5, 5]
//! 3    conv 3x3x512 /1            crop1, conv 1x1x512 /1       [512, 3, 3]
//! ```
//!
//! The adapter convs are smaller than the parallel backbone convs, so each
//! adapter stage first center-crops its input by `(k_backbone - k_adapter)/2`
//! pixels per side; with the stride and pooling mirrored from the backbone
//! stage this makes the two stream outputs align exactly (and keeps their
//! receptive-field centers coincident). Both modality streams share the
//! backbone weights; each has its own adapter stack.

use crate::checkpoint;
use crate::dmc::{DmcBlock, GateMode};
use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, conv2d_backward,
    conv2d_forward, conv2d_output_size, dropout_forward, linear_backward, linear_forward,
    lrn_backward, lrn_forward, maxpool_backward, maxpool_eval, maxpool_forward, relu_backward,
    relu_forward, BatchNorm2d, BnCache, ConvLayer, GradStore, LinearLayer, LrnCache, LrnParams,
    PoolDef,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

pub const LEVELS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Candidate patch side length.
    pub input_size: usize,
    pub backbone_channels: [usize; LEVELS],
    pub backbone_kernels: [usize; LEVELS],
    pub backbone_strides: [usize; LEVELS],
    pub adapter_kernels: [usize; LEVELS],
    /// Max-pool geometry per level (`None` = no pooling).
    pub pools: [Option<PoolDef>; LEVELS],
    /// LRN on the backbone stages that have pooling (levels 1 and 2).
    pub lrn: Option<LrnParams>,
    /// Width of the two hidden fully connected layers.
    pub fc_dim: usize,
    /// Dropout rate in adapters and fully connected layers.
    pub dropout: f64,
    pub dmc_enabled: bool,
    pub gate_mode: GateMode,
    /// When set, the mutual-condition output is added to the joined
    /// features instead of replacing them.
    pub dmc_residual: bool,
    /// Seed for parameter initialization.
    pub init_seed: u64,
    /// Optional pretrained backbone weight container.
    pub pretrained_backbone: Option<PathBuf>,
    /// Fail when the pretrained file or any backbone key is missing.
    pub strict_load: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 107,
            backbone_channels: [96, 256, 512],
            backbone_kernels: [7, 5, 3],
            backbone_strides: [2, 2, 1],
            adapter_kernels: [3, 1, 1],
            pools: [
                Some(PoolDef { kernel: 3, stride: 2 }),
                Some(PoolDef { kernel: 3, stride: 2 }),
                None,
            ],
            lrn: Some(LrnParams::default()),
            fc_dim: 512,
            dropout: 0.5,
            dmc_enabled: true,
            gate_mode: GateMode::Literal,
            dmc_residual: false,
            init_seed: 0,
            pretrained_backbone: None,
            strict_load: false,
        }
    }
}

impl ModelConfig {
    /// Thin configuration for CPU-scale experiments: same topology, same
    /// 107x107 geometry, far fewer channels.
    pub fn desk() -> Self {
        ModelConfig {
            backbone_channels: [8, 16, 32],
            fc_dim: 64,
            dropout: 0.1,
            ..ModelConfig::default()
        }
    }

    /// Per-level spatial sizes of the joined feature maps (after pooling).
    pub fn level_spatial(&self) -> Result<[usize; LEVELS]> {
        let mut sizes = [0usize; LEVELS];
        let mut n = self.input_size;
        for l in 0..LEVELS {
            let kb = self.backbone_kernels[l];
            let ka = self.adapter_kernels[l];
            if kb < ka || (kb - ka) % 2 != 0 {
                return Err(Error::Config(format!(
                    "level {}: adapter kernel {ka} cannot align with backbone kernel {kb}",
                    l + 1
                )));
            }
            let conv_out = conv2d_output_size(n, kb, self.backbone_strides[l], 0, 1);
            // Adapter: crop (kb-ka)/2 per side, conv ka with the same
            // stride: (n - (kb-ka) - ka)/s + 1 == (n - kb)/s + 1. Always equal.
            let out = match self.pools[l] {
                Some(p) => p.output_size(conv_out),
                None => conv_out,
            };
            if out == 0 {
                return Err(Error::Config(format!(
                    "level {}: spatial size collapsed to zero",
                    l + 1
                )));
            }
            sizes[l] = out;
            n = out;
        }
        Ok(sizes)
    }

    /// Width of the flattened classifier input: both modality level-3 maps
    /// concatenated channel-wise.
    pub fn feature_dim(&self) -> Result<usize> {
        let sp = self.level_spatial()?;
        Ok(2 * self.backbone_channels[LEVELS - 1] * sp[LEVELS - 1] * sp[LEVELS - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    T,
}

/// One level's feature map for a single sample.
#[derive(Debug, Clone)]
pub struct FeatureMap<S> {
    /// `[channels, height, width]`
    pub data: Tensor<S>,
    pub level: u8,
    pub modality: Modality,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.data.ndim() != 3 {
            return Err(Error::Shape(format!(
                "feature map must be rank 3, got {:?}",
                self.data.shape()
            )));
        }
        let l = self.level as usize;
        if !(1..=LEVELS).contains(&l) {
            return Err(Error::Shape(format!("level {} out of range", self.level)));
        }
        let want_c = config.backbone_channels[l - 1];
        if self.data.dim(0) != want_c {
            return Err(Error::Shape(format!(
                "level {} expects {want_c} channels, got {}",
                self.level,
                self.data.dim(0)
            )));
        }
        if !self.data.all_finite() {
            return Err(Error::Shape("non-finite feature values".into()));
        }
        Ok(())
    }
}

/// Raw classifier logits for one candidate. The online reliability test
/// (`score < 0`) operates on the positive logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorePair<S> {
    pub pos: S,
    pub neg: S,
}

#[derive(Debug, Clone)]
pub struct BackboneStage<S> {
    pub conv: ConvLayer<S>,
    pub lrn: Option<LrnParams>,
    pub pool: Option<PoolDef>,
}

#[derive(Debug, Clone)]
pub struct AdapterStage<S> {
    /// Center crop per side applied before the conv.
    pub crop: usize,
    pub conv: ConvLayer<S>,
    pub bn: BatchNorm2d<S>,
    pub dropout: f64,
    pub pool: Option<PoolDef>,
}

#[derive(Debug)]
pub struct Network<S> {
    pub config: ModelConfig,
    pub backbone: Vec<BackboneStage<S>>,
    pub adapter_rgb: Vec<AdapterStage<S>>,
    pub adapter_t: Vec<AdapterStage<S>>,
    /// One block per level when the architecture includes mutual
    /// conditioning; empty otherwise.
    pub dmc: Vec<DmcBlock<S>>,
    pub fc4: LinearLayer<S>,
    pub fc5: LinearLayer<S>,
    /// Per-domain binary output heads.
    pub fc6: Vec<LinearLayer<S>>,
    dmc_invocations: AtomicU64,
}

impl<S: Scalar> Clone for Network<S> {
    fn clone(&self) -> Self {
        Network {
            config: self.config.clone(),
            backbone: self.backbone.clone(),
            adapter_rgb: self.adapter_rgb.clone(),
            adapter_t: self.adapter_t.clone(),
            dmc: self.dmc.clone(),
            fc4: self.fc4.clone(),
            fc5: self.fc5.clone(),
            fc6: self.fc6.clone(),
            dmc_invocations: AtomicU64::new(self.dmc_invocations.load(Ordering::Relaxed)),
        }
    }
}

fn he_init<S: Scalar>(t: &mut Tensor<S>, rng: &mut Rng) {
    let shape = t.shape().to_vec();
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    let std = (2.0 / fan_in as f64).sqrt();
    for v in t.data_mut() {
        *v = S::cast(rng.normal() * std);
    }
}

fn small_init<S: Scalar>(t: &mut Tensor<S>, rng: &mut Rng, std: f64) {
    for v in t.data_mut() {
        *v = S::cast(rng.normal() * std);
    }
}

/// Build the network with `num_domains` output heads. The backbone is
/// loaded from `config.pretrained_backbone` when given; adapters, mutual
/// condition blocks and classifier layers are randomly initialized.
pub fn build_network<S: Scalar>(config: &ModelConfig, num_domains: usize) -> Result<Network<S>> {
    if num_domains == 0 {
        return Err(Error::InvalidArgument("num_domains must be >= 1".into()));
    }
    config.level_spatial()?; // validates geometry
    let mut rng = Rng::new(config.init_seed ^ 0x6d63_6e65_74_u64);
    let mut backbone = Vec::with_capacity(LEVELS);
    let mut adapter_rgb = Vec::with_capacity(LEVELS);
    let mut adapter_t = Vec::with_capacity(LEVELS);
    let mut in_c = 3usize;
    for l in 0..LEVELS {
        let out_c = config.backbone_channels[l];
        let mut conv = ConvLayer::new(out_c, in_c, config.backbone_kernels[l], config.backbone_strides[l], 0);
        he_init(&mut conv.weight, &mut rng);
        backbone.push(BackboneStage {
            conv,
            lrn: if config.pools[l].is_some() { config.lrn } else { None },
            pool: config.pools[l],
        });
        for adapters in [&mut adapter_rgb, &mut adapter_t] {
            let mut conv = ConvLayer::new(
                out_c,
                in_c,
                config.adapter_kernels[l],
                config.backbone_strides[l],
                0,
            );
            he_init(&mut conv.weight, &mut rng);
            adapters.push(AdapterStage {
                crop: (config.backbone_kernels[l] - config.adapter_kernels[l]) / 2,
                conv,
                bn: BatchNorm2d::new(out_c),
                dropout: config.dropout,
                pool: config.pools[l],
            });
        }
        in_c = out_c;
    }
    let dmc = if config.dmc_enabled {
        (0..LEVELS)
            .map(|l| DmcBlock::init(l + 1, config.backbone_channels[l], &mut rng))
            .collect()
    } else {
        Vec::new()
    };
    let feat_dim = config.feature_dim()?;
    let mut fc4 = LinearLayer::new(config.fc_dim, feat_dim);
    he_init(&mut fc4.weight, &mut rng);
    let mut fc5 = LinearLayer::new(config.fc_dim, config.fc_dim);
    he_init(&mut fc5.weight, &mut rng);
    let mut fc6 = Vec::with_capacity(num_domains);
    for _ in 0..num_domains {
        let mut head = LinearLayer::new(2, config.fc_dim);
        small_init(&mut head.weight, &mut rng, 0.01);
        fc6.push(head);
    }
    let mut net = Network {
        config: config.clone(),
        backbone,
        adapter_rgb,
        adapter_t,
        dmc,
        fc4,
        fc5,
        fc6,
        dmc_invocations: AtomicU64::new(0),
    };
    if let Some(path) = net.config.pretrained_backbone.clone() {
        let strict = net.config.strict_load;
        load_pretrained_backbone(&mut net, &path, strict)?;
    }
    Ok(net)
}

/// Load `backbone.conv{1..3}.{weight,bias}` from a weight container.
pub fn load_pretrained_backbone<S: Scalar>(
    net: &mut Network<S>,
    path: &Path,
    strict: bool,
) -> Result<()> {
    if !path.exists() {
        if strict {
            return Err(Error::Load(format!(
                "pretrained backbone file {} not found",
                path.display()
            )));
        }
        return Ok(());
    }
    let container = checkpoint::load(path)?;
    for (l, stage) in net.backbone.iter_mut().enumerate() {
        for (suffix, tensor) in [
            ("weight", &mut stage.conv.weight),
            ("bias", &mut stage.conv.bias),
        ] {
            let key = format!("backbone.conv{}.{suffix}", l + 1);
            match container.get(&key) {
                Some(entry) => {
                    if entry.shape != tensor.shape() {
                        return Err(Error::Load(format!(
                            "{key}: shape {:?} in file, {:?} in model",
                            entry.shape,
                            tensor.shape()
                        )));
                    }
                    for (dst, &src) in tensor.data_mut().iter_mut().zip(entry.data.iter()) {
                        *dst = S::cast(src);
                    }
                }
                None if strict => {
                    return Err(Error::Load(format!("{key} missing from {}", path.display())))
                }
                None => {}
            }
        }
    }
    Ok(())
}

/// Parameter groups for per-group learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backbone,
    Adapter,
    Dmc,
    FcShared,
    FcDomain,
}

impl ParamGroup {
    pub fn name(&self) -> &'static str {
        match self {
            ParamGroup::Backbone => "backbone",
            ParamGroup::Adapter => "adapter",
            ParamGroup::Dmc => "dmc",
            ParamGroup::FcShared => "fc_shared",
            ParamGroup::FcDomain => "fc_domain",
        }
    }

    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Backbone,
        ParamGroup::Adapter,
        ParamGroup::Dmc,
        ParamGroup::FcShared,
        ParamGroup::FcDomain,
    ];
}

/// Every parameter path maps to exactly one group.
pub fn group_of(path: &str) -> ParamGroup {
    if path.starts_with("backbone.") {
        ParamGroup::Backbone
    } else if path.starts_with("adapter_") {
        ParamGroup::Adapter
    } else if path.starts_with("dmc.") {
        ParamGroup::Dmc
    } else if path.starts_with("fc4.") || path.starts_with("fc5.") {
        ParamGroup::FcShared
    } else if path.starts_with("fc6.") {
        ParamGroup::FcDomain
    } else {
        panic!("parameter path {path:?} belongs to no group");
    }
}

impl<S: Scalar> Network<S> {
    pub fn num_domains(&self) -> usize {
        self.fc6.len()
    }

    /// Replace all domain heads with one freshly initialized head (the
    /// per-sequence layer used for online tracking).
    pub fn reset_domain_head(&mut self, rng: &mut Rng) {
        let mut head = LinearLayer::new(2, self.config.fc_dim);
        small_init(&mut head.weight, rng, 0.01);
        self.fc6 = vec![head];
    }

    /// How many times a mutual-condition block has run; used by the
    /// ablation harness to verify variant wiring.
    pub fn dmc_call_count(&self) -> u64 {
        self.dmc_invocations.load(Ordering::Relaxed)
    }

    pub fn reset_dmc_count(&self) {
        self.dmc_invocations.store(0, Ordering::Relaxed);
    }

    /// Visit all learnable parameters as `(path, tensor)`.
    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        for (l, stage) in self.backbone.iter().enumerate() {
            f(format!("backbone.conv{}.weight", l + 1), &stage.conv.weight);
            f(format!("backbone.conv{}.bias", l + 1), &stage.conv.bias);
        }
        for (name, adapters) in [("adapter_rgb", &self.adapter_rgb), ("adapter_t", &self.adapter_t)]
        {
            for (l, st) in adapters.iter().enumerate() {
                f(format!("{name}.{}.conv.weight", l + 1), &st.conv.weight);
                f(format!("{name}.{}.conv.bias", l + 1), &st.conv.bias);
                f(format!("{name}.{}.bn.gamma", l + 1), &st.bn.gamma);
                f(format!("{name}.{}.bn.beta", l + 1), &st.bn.beta);
            }
        }
        for (l, block) in self.dmc.iter().enumerate() {
            block.visit(&format!("dmc.l{}", l + 1), f);
        }
        f("fc4.weight".into(), &self.fc4.weight);
        f("fc4.bias".into(), &self.fc4.bias);
        f("fc5.weight".into(), &self.fc5.weight);
        f("fc5.bias".into(), &self.fc5.bias);
        for (k, head) in self.fc6.iter().enumerate() {
            f(format!("fc6.{k}.weight"), &head.weight);
            f(format!("fc6.{k}.bias"), &head.bias);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        for (l, stage) in self.backbone.iter_mut().enumerate() {
            f(format!("backbone.conv{}.weight", l + 1), &mut stage.conv.weight);
            f(format!("backbone.conv{}.bias", l + 1), &mut stage.conv.bias);
        }
        for (name, adapters) in [
            ("adapter_rgb", &mut self.adapter_rgb),
            ("adapter_t", &mut self.adapter_t),
        ] {
            for (l, st) in adapters.iter_mut().enumerate() {
                f(format!("{name}.{}.conv.weight", l + 1), &mut st.conv.weight);
                f(format!("{name}.{}.conv.bias", l + 1), &mut st.conv.bias);
                f(format!("{name}.{}.bn.gamma", l + 1), &mut st.bn.gamma);
                f(format!("{name}.{}.bn.beta", l + 1), &mut st.bn.beta);
            }
        }
        for (l, block) in self.dmc.iter_mut().enumerate() {
            block.visit_mut(&format!("dmc.l{}", l + 1), f);
        }
        f("fc4.weight".into(), &mut self.fc4.weight);
        f("fc4.bias".into(), &mut self.fc4.bias);
        f("fc5.weight".into(), &mut self.fc5.weight);
        f("fc5.bias".into(), &mut self.fc5.bias);
        for (k, head) in self.fc6.iter_mut().enumerate() {
            f(format!("fc6.{k}.weight"), &mut head.weight);
            f(format!("fc6.{k}.bias"), &mut head.bias);
        }
    }

    /// Visit non-learnable buffers (batch-norm running statistics).
    pub fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        for (name, adapters) in [("adapter_rgb", &self.adapter_rgb), ("adapter_t", &self.adapter_t)]
        {
            for (l, st) in adapters.iter().enumerate() {
                f(format!("{name}.{}.bn.running_mean", l + 1), &st.bn.running_mean);
                f(format!("{name}.{}.bn.running_var", l + 1), &st.bn.running_var);
            }
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        for (name, adapters) in [
            ("adapter_rgb", &mut self.adapter_rgb),
            ("adapter_t", &mut self.adapter_t),
        ] {
            for (l, st) in adapters.iter_mut().enumerate() {
                f(format!("{name}.{}.bn.running_mean", l + 1), &mut st.bn.running_mean);
                f(format!("{name}.{}.bn.running_var", l + 1), &mut st.bn.running_var);
            }
        }
    }

    /// Save all parameters (and buffers) to the weight container. Domain
    /// heads are omitted when `include_domain_heads` is false — the shared
    /// trunk is what survives offline training.
    pub fn save_checkpoint(&self, path: &Path, include_domain_heads: bool) -> Result<()> {
        let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        self.visit_params(&mut |name, t| {
            if !include_domain_heads && name.starts_with("fc6.") {
                return;
            }
            entries.push((
                name,
                t.shape().to_vec(),
                t.iter().map(|v| v.as_f64()).collect(),
            ));
        });
        self.visit_buffers(&mut |name, t| {
            entries.push((
                name,
                t.shape().to_vec(),
                t.iter().map(|v| v.as_f64()).collect(),
            ));
        });
        checkpoint::save(path, &entries)
    }

    /// Load parameters and buffers by name. With `strict` every model
    /// tensor except the domain heads must be present in the file.
    pub fn load_checkpoint(&mut self, path: &Path, strict: bool) -> Result<()> {
        let container = checkpoint::load(path)?;
        let mut missing = Vec::new();
        let mut apply = |name: String, t: &mut Tensor<S>| {
            if let Some(entry) = container.get(&name) {
                if entry.shape != t.shape() {
                    missing.push(format!(
                        "{name}: shape {:?} in file vs {:?} in model",
                        entry.shape,
                        t.shape()
                    ));
                    return;
                }
                for (dst, &src) in t.data_mut().iter_mut().zip(entry.data.iter()) {
                    *dst = S::cast(src);
                }
            } else if !name.starts_with("fc6.") {
                missing.push(name);
            }
        };
        self.visit_params_mut(&mut apply);
        self.visit_buffers_mut(&mut apply);
        if strict && !missing.is_empty() {
            return Err(Error::Load(format!(
                "checkpoint {} incomplete: {}",
                path.display(),
                missing.join(", ")
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct BackboneTrace<S> {
    relu_out: Tensor<S>,
    lrn_cache: Option<LrnCache<S>>,
    pool_argmax: Option<Vec<u32>>,
}

struct AdapterTrace<S> {
    cropped: Tensor<S>,
    relu_out: Tensor<S>,
    bn_cache: BnCache<S>,
    dropout_mask: Tensor<S>,
    pool_argmax: Option<Vec<u32>>,
    pool_in_shape: Vec<usize>,
}

struct LevelTrace<S> {
    input_rgb: Tensor<S>,
    input_t: Tensor<S>,
    bb_rgb: BackboneTrace<S>,
    bb_t: BackboneTrace<S>,
    ad_rgb: AdapterTrace<S>,
    ad_t: AdapterTrace<S>,
    joined_rgb: Tensor<S>,
    joined_t: Tensor<S>,
    dmc: Option<crate::dmc::DmcTrace<S>>,
}

/// Forward cache for [`Network::forward_train`].
pub struct NetTrace<S> {
    levels: Vec<LevelTrace<S>>,
}

/// Forward cache for [`Network::fc_train`].
pub struct FcTrace<S> {
    input: Tensor<S>,
    h4: Tensor<S>,
    mask4: Tensor<S>,
    h4d: Tensor<S>,
    h5: Tensor<S>,
    mask5: Tensor<S>,
    h5d: Tensor<S>,
    domain: usize,
}

fn crop_center<S: Scalar>(x: &Tensor<S>, crop: usize) -> Tensor<S> {
    if crop == 0 {
        return x.clone();
    }
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let nh = h - 2 * crop;
    let nw = w - 2 * crop;
    let mut out = Tensor::zeros(&[n, c, nh, nw]);
    for i in 0..n {
        let src = x.batch_item(i);
        let dst = out.batch_item_mut(i);
        for ch in 0..c {
            for y in 0..nh {
                let srow = ch * h * w + (y + crop) * w + crop;
                let drow = ch * nh * nw + y * nw;
                dst[drow..drow + nw].copy_from_slice(&src[srow..srow + nw]);
            }
        }
    }
    out
}

fn uncrop_center<S: Scalar>(dy: &Tensor<S>, crop: usize, full_shape: &[usize]) -> Tensor<S> {
    if crop == 0 {
        return dy.clone();
    }
    let mut out = Tensor::zeros(full_shape);
    let (n, c) = (full_shape[0], full_shape[1]);
    let (h, w) = (full_shape[2], full_shape[3]);
    let (nh, nw) = (dy.dim(2), dy.dim(3));
    for i in 0..n {
        let src = dy.batch_item(i);
        let dst = out.batch_item_mut(i);
        for ch in 0..c {
            for y in 0..nh {
                let srow = ch * nh * nw + y * nw;
                let drow = ch * h * w + (y + crop) * w + crop;
                dst[drow..drow + nw].copy_from_slice(&src[srow..srow + nw]);
            }
        }
    }
    out
}

impl<S: Scalar> Network<S> {
    fn assert_level_shape(&self, l: usize, t: &Tensor<S>) {
        let sp = self.config.level_spatial().expect("validated at build");
        assert_eq!(
            (t.dim(1), t.dim(2), t.dim(3)),
            (self.config.backbone_channels[l], sp[l], sp[l]),
            "level {} output shape violates the configured chain",
            l + 1
        );
    }

    fn backbone_stage_eval(&self, l: usize, x: &Tensor<S>) -> Tensor<S> {
        let stage = &self.backbone[l];
        let c = conv2d_forward(&stage.conv, x);
        let r = relu_forward(&c);
        let ln = match &stage.lrn {
            Some(p) => lrn_forward(p, &r).0,
            None => r,
        };
        match stage.pool {
            Some(p) => maxpool_eval(p, &ln),
            None => ln,
        }
    }

    fn backbone_stage(
        &self,
        l: usize,
        x: &Tensor<S>,
    ) -> (Tensor<S>, BackboneTrace<S>) {
        let stage = &self.backbone[l];
        let c = conv2d_forward(&stage.conv, x);
        let r = relu_forward(&c);
        let (ln, lrn_cache) = match &stage.lrn {
            Some(p) => {
                let (y, cache) = lrn_forward(p, &r);
                (y, Some(cache))
            }
            None => (r.clone(), None),
        };
        let (out, pool_argmax) = match stage.pool {
            Some(p) => {
                let (y, am) = maxpool_forward(p, &ln);
                (y, Some(am))
            }
            None => (ln, None),
        };
        (
            out,
            BackboneTrace {
                relu_out: r,
                lrn_cache,
                pool_argmax,
            },
        )
    }

    fn backbone_stage_backward(
        &self,
        l: usize,
        input: &Tensor<S>,
        trace: &BackboneTrace<S>,
        dy: &Tensor<S>,
        grads: &mut GradStore<S>,
    ) -> Tensor<S> {
        let stage = &self.backbone[l];
        let mut d = dy.clone();
        if stage.pool.is_some() {
            d = maxpool_backward(
                trace.relu_out.shape(),
                trace.pool_argmax.as_ref().unwrap(),
                &d,
            );
        }
        if let (Some(p), Some(cache)) = (&stage.lrn, &trace.lrn_cache) {
            d = lrn_backward(p, &trace.relu_out, cache, &d);
        }
        d = relu_backward(&trace.relu_out, &d);
        let g = conv2d_backward(&stage.conv, input, &d);
        grads.accum(&format!("backbone.conv{}.weight", l + 1), g.dw);
        grads.accum(&format!("backbone.conv{}.bias", l + 1), g.db);
        g.dx
    }

    fn adapter_stage_eval(stage: &AdapterStage<S>, x: &Tensor<S>) -> Tensor<S> {
        let cropped = crop_center(x, stage.crop);
        let c = conv2d_forward(&stage.conv, &cropped);
        let r = relu_forward(&c);
        let b = batchnorm_forward_eval(&stage.bn, &r);
        match stage.pool {
            Some(p) => maxpool_eval(p, &b),
            None => b,
        }
    }

    fn adapter_stage_train(
        adapters: &mut [AdapterStage<S>],
        l: usize,
        x: &Tensor<S>,
        rng: &mut Rng,
    ) -> (Tensor<S>, AdapterTrace<S>) {
        let stage = &mut adapters[l];
        let cropped = crop_center(x, stage.crop);
        let c = conv2d_forward(&stage.conv, &cropped);
        let r = relu_forward(&c);
        let (b, bn_cache) = batchnorm_forward_train(&mut stage.bn, &r);
        let (dr, mask) = dropout_forward(&b, stage.dropout, rng);
        let pool_in_shape = dr.shape().to_vec();
        let (out, pool_argmax) = match stage.pool {
            Some(p) => {
                let (y, am) = maxpool_forward(p, &dr);
                (y, Some(am))
            }
            None => (dr, None),
        };
        (
            out,
            AdapterTrace {
                cropped,
                relu_out: r,
                bn_cache,
                dropout_mask: mask,
                pool_argmax,
                pool_in_shape,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn adapter_stage_backward(
        &self,
        which: &str,
        l: usize,
        input_shape: &[usize],
        trace: &AdapterTrace<S>,
        dy: &Tensor<S>,
        grads: &mut GradStore<S>,
    ) -> Tensor<S> {
        let stage = match which {
            "adapter_rgb" => &self.adapter_rgb[l],
            _ => &self.adapter_t[l],
        };
        let mut d = dy.clone();
        if stage.pool.is_some() {
            d = maxpool_backward(&trace.pool_in_shape, trace.pool_argmax.as_ref().unwrap(), &d);
        }
        d = d.hadamard(&trace.dropout_mask);
        let bn_g = batchnorm_backward(&stage.bn, &trace.bn_cache, &d);
        grads.accum(&format!("{which}.{}.bn.gamma", l + 1), bn_g.dgamma);
        grads.accum(&format!("{which}.{}.bn.beta", l + 1), bn_g.dbeta);
        let d = relu_backward(&trace.relu_out, &bn_g.dx);
        let g = conv2d_backward(&stage.conv, &trace.cropped, &d);
        grads.accum(&format!("{which}.{}.conv.weight", l + 1), g.dw);
        grads.accum(&format!("{which}.{}.conv.bias", l + 1), g.db);
        uncrop_center(&g.dx, stage.crop, input_shape)
    }

    /// Inference forward: eval-mode batch norm, no dropout, no caches.
    /// Returns the level-3 joined feature maps `([N,C,h,w]` per modality).
    pub fn forward_eval(
        &self,
        rgb: &Tensor<S>,
        t: &Tensor<S>,
        use_dmc: bool,
    ) -> (Tensor<S>, Tensor<S>) {
        assert_eq!(rgb.shape(), t.shape(), "modality batch shapes differ");
        let mut z_rgb = rgb.clone();
        let mut z_t = t.clone();
        for l in 0..LEVELS {
            let b_rgb = self.backbone_stage_eval(l, &z_rgb);
            let b_t = self.backbone_stage_eval(l, &z_t);
            let a_rgb = Self::adapter_stage_eval(&self.adapter_rgb[l], &z_rgb);
            let a_t = Self::adapter_stage_eval(&self.adapter_t[l], &z_t);
            let mut joined_rgb = b_rgb;
            joined_rgb.add_assign(&a_rgb);
            let mut joined_t = b_t;
            joined_t.add_assign(&a_t);
            self.assert_level_shape(l, &joined_rgb);
            if use_dmc && !self.dmc.is_empty() {
                self.dmc_invocations.fetch_add(1, Ordering::Relaxed);
                let (out_rgb, out_t, _) =
                    self.dmc[l].forward(&joined_rgb, &joined_t, self.config.gate_mode);
                if self.config.dmc_residual {
                    joined_rgb.add_assign(&out_rgb);
                    joined_t.add_assign(&out_t);
                } else {
                    joined_rgb = out_rgb;
                    joined_t = out_t;
                }
            }
            z_rgb = joined_rgb;
            z_t = joined_t;
        }
        (z_rgb, z_t)
    }

    /// Training forward with caches; batch-norm running statistics are
    /// updated and dropout is driven by `rng`.
    pub fn forward_train(
        &mut self,
        rgb: &Tensor<S>,
        t: &Tensor<S>,
        use_dmc: bool,
        rng: &mut Rng,
    ) -> (Tensor<S>, Tensor<S>, NetTrace<S>) {
        assert_eq!(rgb.shape(), t.shape());
        let gate_mode = self.config.gate_mode;
        let residual = self.config.dmc_residual;
        let mut z_rgb = rgb.clone();
        let mut z_t = t.clone();
        let mut levels = Vec::with_capacity(LEVELS);
        for l in 0..LEVELS {
            let (b_rgb, bb_rgb) = self.backbone_stage(l, &z_rgb);
            let (b_t, bb_t) = self.backbone_stage(l, &z_t);
            let (a_rgb, ad_rgb) = Self::adapter_stage_train(&mut self.adapter_rgb, l, &z_rgb, rng);
            let (a_t, ad_t) = Self::adapter_stage_train(&mut self.adapter_t, l, &z_t, rng);
            let mut joined_rgb = b_rgb;
            joined_rgb.add_assign(&a_rgb);
            let mut joined_t = b_t;
            joined_t.add_assign(&a_t);
            self.assert_level_shape(l, &joined_rgb);
            let (next_rgb, next_t, dmc_trace) = if use_dmc && !self.dmc.is_empty() {
                self.dmc_invocations.fetch_add(1, Ordering::Relaxed);
                let (out_rgb, out_t, trace) =
                    self.dmc[l].forward(&joined_rgb, &joined_t, gate_mode);
                if residual {
                    let mut nr = joined_rgb.clone();
                    nr.add_assign(&out_rgb);
                    let mut nt = joined_t.clone();
                    nt.add_assign(&out_t);
                    (nr, nt, Some(trace))
                } else {
                    (out_rgb, out_t, Some(trace))
                }
            } else {
                (joined_rgb.clone(), joined_t.clone(), None)
            };
            levels.push(LevelTrace {
                input_rgb: z_rgb,
                input_t: z_t,
                bb_rgb,
                bb_t,
                ad_rgb,
                ad_t,
                joined_rgb,
                joined_t,
                dmc: dmc_trace,
            });
            z_rgb = next_rgb;
            z_t = next_t;
        }
        (z_rgb, z_t, NetTrace { levels })
    }

    /// Backward through the convolutional trunk given gradients on the two
    /// level-3 outputs. Returns accumulated parameter gradients.
    pub fn backward_features(
        &self,
        trace: &NetTrace<S>,
        d_rgb3: &Tensor<S>,
        d_t3: &Tensor<S>,
    ) -> GradStore<S> {
        let mut grads = GradStore::new();
        let mut d_rgb = d_rgb3.clone();
        let mut d_t = d_t3.clone();
        for l in (0..LEVELS).rev() {
            let lt = &trace.levels[l];
            let (mut dj_rgb, mut dj_t) = if let Some(dmc_trace) = &lt.dmc {
                let (dr, dt) = self.dmc[l].backward(
                    &lt.joined_rgb,
                    &lt.joined_t,
                    dmc_trace,
                    &d_rgb,
                    &d_t,
                    &format!("dmc.l{}", l + 1),
                    &mut grads,
                );
                if self.config.dmc_residual {
                    let mut djr = d_rgb.clone();
                    djr.add_assign(&dr);
                    let mut djt = d_t.clone();
                    djt.add_assign(&dt);
                    (djr, djt)
                } else {
                    (dr, dt)
                }
            } else {
                (d_rgb.clone(), d_t.clone())
            };
            // The join is a plain sum: the same gradient flows into the
            // backbone and adapter streams.
            let db_rgb =
                self.backbone_stage_backward(l, &lt.input_rgb, &lt.bb_rgb, &dj_rgb, &mut grads);
            let db_t = self.backbone_stage_backward(l, &lt.input_t, &lt.bb_t, &dj_t, &mut grads);
            let da_rgb = self.adapter_stage_backward(
                "adapter_rgb",
                l,
                lt.input_rgb.shape(),
                &lt.ad_rgb,
                &dj_rgb,
                &mut grads,
            );
            let da_t = self.adapter_stage_backward(
                "adapter_t",
                l,
                lt.input_t.shape(),
                &lt.ad_t,
                &dj_t,
                &mut grads,
            );
            dj_rgb = db_rgb;
            dj_rgb.add_assign(&da_rgb);
            dj_t = db_t;
            dj_t.add_assign(&da_t);
            d_rgb = dj_rgb;
            d_t = dj_t;
        }
        grads
    }

    /// Concatenate and flatten the two level-3 maps (RGB first) into the
    /// classifier input `[N, D]`.
    pub fn concat_features(f_rgb: &Tensor<S>, f_t: &Tensor<S>) -> Tensor<S> {
        assert_eq!(f_rgb.shape(), f_t.shape());
        let n = f_rgb.dim(0);
        let per = f_rgb.len() / n;
        let mut out = Tensor::zeros(&[n, 2 * per]);
        for i in 0..n {
            let dst = out.batch_item_mut(i);
            dst[..per].copy_from_slice(f_rgb.batch_item(i));
            dst[per..].copy_from_slice(f_t.batch_item(i));
        }
        out
    }

    /// Split a gradient on the concatenated features back into per-modality
    /// level-3 gradients of shape `shape3`.
    pub fn split_feature_grad(d: &Tensor<S>, shape3: &[usize]) -> (Tensor<S>, Tensor<S>) {
        let n = d.dim(0);
        let per = d.dim(1) / 2;
        let mut dr = Tensor::zeros(shape3);
        let mut dt = Tensor::zeros(shape3);
        for i in 0..n {
            let src = d.batch_item(i);
            dr.batch_item_mut(i).copy_from_slice(&src[..per]);
            dt.batch_item_mut(i).copy_from_slice(&src[per..]);
        }
        (dr, dt)
    }

    /// Classifier forward without dropout.
    pub fn fc_eval(&self, feats: &Tensor<S>, domain: usize) -> Result<Tensor<S>> {
        if domain >= self.fc6.len() {
            return Err(Error::InvalidArgument(format!(
                "domain {domain} out of range ({} heads)",
                self.fc6.len()
            )));
        }
        let h4 = relu_forward(&linear_forward(&self.fc4, feats));
        let h5 = relu_forward(&linear_forward(&self.fc5, &h4));
        Ok(linear_forward(&self.fc6[domain], &h5))
    }

    /// Classifier forward in training mode (dropout before fc5 and fc6).
    pub fn fc_train(&self, feats: &Tensor<S>, domain: usize, rng: &mut Rng) -> Result<(Tensor<S>, FcTrace<S>)> {
        if domain >= self.fc6.len() {
            return Err(Error::InvalidArgument(format!(
                "domain {domain} out of range ({} heads)",
                self.fc6.len()
            )));
        }
        let h4 = relu_forward(&linear_forward(&self.fc4, feats));
        let (h4d, mask4) = dropout_forward(&h4, self.config.dropout, rng);
        let h5 = relu_forward(&linear_forward(&self.fc5, &h4d));
        let (h5d, mask5) = dropout_forward(&h5, self.config.dropout, rng);
        let logits = linear_forward(&self.fc6[domain], &h5d);
        Ok((
            logits,
            FcTrace {
                input: feats.clone(),
                h4,
                mask4,
                h4d,
                h5,
                mask5,
                h5d,
                domain,
            },
        ))
    }

    /// Backward through [`Self::fc_train`]; returns parameter gradients and
    /// the gradient on the classifier input.
    pub fn fc_backward(&self, trace: &FcTrace<S>, dlogits: &Tensor<S>) -> (GradStore<S>, Tensor<S>) {
        let mut grads = GradStore::new();
        let g6 = linear_backward(&self.fc6[trace.domain], &trace.h5d, dlogits);
        grads.accum(&format!("fc6.{}.weight", trace.domain), g6.dw);
        grads.accum(&format!("fc6.{}.bias", trace.domain), g6.db);
        let d_h5 = relu_backward(&trace.h5, &g6.dx.hadamard(&trace.mask5));
        let g5 = linear_backward(&self.fc5, &trace.h4d, &d_h5);
        grads.accum("fc5.weight", g5.dw);
        grads.accum("fc5.bias", g5.db);
        let d_h4 = relu_backward(&trace.h4, &g5.dx.hadamard(&trace.mask4));
        let g4 = linear_backward(&self.fc4, &trace.input, &d_h4);
        grads.accum("fc4.weight", g4.dw);
        grads.accum("fc4.bias", g4.db);
        (grads, g4.dx)
    }

    /// Score per-candidate level-3 feature-map pairs for `domain`.
    pub fn classify(
        &self,
        f_rgb3: &Tensor<S>,
        f_t3: &Tensor<S>,
        domain: usize,
    ) -> Result<Vec<ScorePair<S>>> {
        let feats = Self::concat_features(f_rgb3, f_t3);
        let logits = self.fc_eval(&feats, domain)?;
        Ok((0..logits.dim(0))
            .map(|i| {
                let row = logits.batch_item(i);
                ScorePair {
                    neg: row[0],
                    pos: row[1],
                }
            })
            .collect())
    }

    /// Full inference scoring of a batch of patch pairs.
    pub fn score_patches(
        &self,
        rgb: &Tensor<S>,
        t: &Tensor<S>,
        use_dmc: bool,
        domain: usize,
    ) -> Result<Vec<ScorePair<S>>> {
        let (f_rgb, f_t) = self.forward_eval(rgb, t, use_dmc);
        self.classify(&f_rgb, &f_t, domain)
    }

    /// Gate response maps for one patch pair: per level, the four gates'
    /// channel-mean activation maps (eval-mode trunk). Used by the debug
    /// image dump.
    pub fn gate_responses(
        &self,
        rgb: &Tensor<S>,
        t: &Tensor<S>,
    ) -> Vec<(String, usize, Vec<f64>)> {
        assert!(!self.dmc.is_empty(), "network has no mutual-condition blocks");
        let mut z_rgb = rgb.clone();
        let mut z_t = t.clone();
        let mut out = Vec::new();
        for l in 0..LEVELS {
            let b_rgb = self.backbone_stage_eval(l, &z_rgb);
            let b_t = self.backbone_stage_eval(l, &z_t);
            let a_rgb = Self::adapter_stage_eval(&self.adapter_rgb[l], &z_rgb);
            let a_t = Self::adapter_stage_eval(&self.adapter_t[l], &z_t);
            let mut joined_rgb = b_rgb;
            joined_rgb.add_assign(&a_rgb);
            let mut joined_t = b_t;
            joined_t.add_assign(&a_t);
            let (out_rgb, out_t, trace) =
                self.dmc[l].forward(&joined_rgb, &joined_t, self.config.gate_mode);
            for (name, map) in trace.gate_responses() {
                let (c, h, w) = (map.dim(1), map.dim(2), map.dim(3));
                let mut mean = vec![0.0f64; h * w];
                for ch in 0..c {
                    for (i, m) in mean.iter_mut().enumerate() {
                        *m += map.data()[ch * h * w + i].as_f64();
                    }
                }
                for m in &mut mean {
                    *m /= c as f64;
                }
                out.push((format!("l{}_{name}", l + 1), w, mean));
            }
            if self.config.dmc_residual {
                z_rgb = joined_rgb;
                z_rgb.add_assign(&out_rgb);
                z_t = joined_t;
                z_t.add_assign(&out_t);
            } else {
                z_rgb = out_rgb;
                z_t = out_t;
            }
        }
        out
    }

    /// Single-sample convenience wrapper returning the level-3 pair as
    /// [`FeatureMap`]s (rank-3, with level/modality metadata).
    pub fn forward_features(
        &self,
        rgb_patch: &Tensor<S>,
        t_patch: &Tensor<S>,
        use_dmc: bool,
    ) -> Result<(FeatureMap<S>, FeatureMap<S>)> {
        if rgb_patch.ndim() != 3 || rgb_patch.dim(0) != 3 {
            return Err(Error::Shape(format!(
                "expected [3, {0}, {0}] patch, got {1:?}",
                self.config.input_size,
                rgb_patch.shape()
            )));
        }
        let rgb = Tensor::stack(&[rgb_patch.clone()]);
        let t = Tensor::stack(&[t_patch.clone()]);
        let (f_rgb, f_t) = self.forward_eval(&rgb, &t, use_dmc);
        let shape3: Vec<usize> = f_rgb.shape()[1..].to_vec();
        let maps = [
            FeatureMap {
                data: Tensor::from_vec(&shape3, f_rgb.batch_item(0).to_vec()),
                level: LEVELS as u8,
                modality: Modality::Rgb,
            },
            FeatureMap {
                data: Tensor::from_vec(&shape3, f_t.batch_item(0).to_vec()),
                level: LEVELS as u8,
                modality: Modality::T,
            },
        ];
        let [a, b] = maps;
        Ok((a, b))
    }
}
