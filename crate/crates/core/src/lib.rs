//! Per-shot constant-quality video encoding toolkit.
//!
//! The pipeline splits a video into one-shot segments, extracts spatial,
//! temporal and pre-coding features per segment, and predicts the rate
//! factor (RF) that makes the encoder hit a target VMAF score. A first
//! prediction network produces an RF, the segment is encoded and its
//! quality measured; segments that miss the acceptance window get a second
//! prediction from an independent network that additionally sees the
//! first-pass RF and measured quality as feedback, and the second-pass
//! stream is kept.
//!
//! Real encoders and quality meters are reached through adapter commands
//! (see the companion CLI crate). For training and verification without
//! external codecs, [`oracle`] provides an analytically invertible
//! synthetic RF-to-quality curve family.

pub mod controller;
pub mod features;
pub mod frameio;
pub mod labeler;
pub mod model;
pub mod oracle;
pub mod precode;
pub mod segmenter;
pub mod texture;

pub use controller::{EncodeJob, QualityTarget, RunReport, SegmentOutcome, SegmentResult};
pub use features::{FeatureSchema, FeatureVector};
pub use frameio::{FrameSequence, Plane};
pub use model::{LabeledExample, ModelParams, TrainConfig};
pub use oracle::SyntheticCurveParams;
pub use segmenter::Segment;

/// Encoder rate-factor range (x264/x265 CRF convention, lower = better).
pub const RF_MIN: f64 = 0.0;
pub const RF_MAX: f64 = 51.0;
