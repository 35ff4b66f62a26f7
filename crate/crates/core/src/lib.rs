//! RGB-thermal object tracking with duality-gated mutual feature conditioning.
//!
//! The crate is organized around the tracking pipeline:
//!
//! * [`model`] — the two-stream convolutional network (shared backbone,
//!   per-modality adapters, multi-domain classifier head).
//! * [`dmc`] — the duality-gated mutual condition block that lets each
//!   modality modulate the other's features through multi-scale conditions
//!   and sigmoid gates.
//! * [`geometry`] — boxes, IoU, candidate samplers, patch cropping and
//!   bounding-box regression.
//! * [`motion`] — camera-motion detection from regional optical flow and
//!   the directional re-sampler.
//! * [`tracker`] — the online tracking loop: first-frame fine-tuning,
//!   per-frame candidate scoring, reliability-gated re-sampling and
//!   short/long-term model updates.
//! * [`trainer`] — offline multi-domain training with per-group learning
//!   rates.
//! * [`data`] / [`synth`] — dataset ingestion and the synthetic RGBT
//!   sequence generator.
//! * [`eval`] — precision/success metrics, attribute reports and the
//!   ablation harness.
//!
//! All numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! concrete aliases for the common instantiations live at the crate root.

pub mod checkpoint;
pub mod data;
pub mod dmc;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod motion;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod tracker;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Single-precision tensor, the tracking/training workhorse.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, used by the gradient-check oracles.
pub type Tensor64 = Tensor<f64>;
/// Single-precision network.
pub type Network32 = model::Network<f32>;
/// Double-precision network.
pub type Network64 = model::Network<f64>;
/// Single-precision tracker over the real network model.
pub type Tracker32 = tracker::Tracker<f32, tracker::NetworkModel<f32>>;
