//! The per-segment two-pass control loop.
//!
//! Pass 1: the base feature vector goes through the first prediction
//! network, the segment is encoded at the predicted RF and its quality
//! measured. If the measurement lands inside the acceptance window the
//! stream is kept and the segment is done. Otherwise the second network —
//! which additionally sees the first pass's RF and measured quality — picks
//! a corrected RF, and that second stream is kept *unconditionally*: in
//! production the second pass is never measured (measurement costs as much
//! as it costs), so the loop is bounded at two encodes per segment.
//!
//! Encoders and quality meters are reached through the [`Codec`] trait; the
//! CLI binds external processes to it, and [`crate::oracle::OracleCodec`]
//! provides a synthetic in-memory implementation for experiments.

use crate::features::FeatureVector;
use crate::model::{ModelError, ModelParams};
use crate::{RF_MAX, RF_MIN};
use rayon::prelude::*;
use std::fmt;

/// Default quality target on the VMAF scale.
pub const DEFAULT_TARGET_VMAF: f64 = 91.0;
/// Accuracy bands reported by [`accuracy_report`]: share of segments with
/// |achieved − target| below each value.
pub const DEFAULT_ACCURACY_BANDS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

/// Target quality and the acceptance window around it. A first-pass result
/// inside `[window_low, window_high]` needs no second pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityTarget {
    pub target: f64,
    pub window_low: f64,
    pub window_high: f64,
}

impl QualityTarget {
    pub fn new(window_low: f64, target: f64, window_high: f64) -> Result<Self, ControllerError> {
        if !(window_low < target && target < window_high) {
            return Err(ControllerError::BadWindow { window_low, target, window_high });
        }
        Ok(QualityTarget { target, window_low, window_high })
    }

    /// Window of ±1 around the target (the [90, 92] band at target 91).
    pub fn for_target(target: f64) -> Self {
        QualityTarget {
            target,
            window_low: target - 1.0,
            window_high: target + 1.0,
        }
    }

    /// Whether a measured quality needs no second pass. Both edges count as
    /// inside.
    pub fn accepts(&self, quality: f64) -> bool {
        (self.window_low..=self.window_high).contains(&quality)
    }
}

impl Default for QualityTarget {
    fn default() -> Self {
        QualityTarget::for_target(DEFAULT_TARGET_VMAF)
    }
}

/// One unit of encodable work: a segment's identity as the codec adapters
/// see it. `id` is the segment's source id (or a synthetic corpus id);
/// `label` is for humans and log lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodeJob {
    pub id: u64,
    pub label: String,
}

impl EncodeJob {
    pub fn new(id: u64, label: impl Into<String>) -> Self {
        EncodeJob { id, label: label.into() }
    }
}

/// Failure inside an encoder or quality-meter adapter. Context (job, pass)
/// is attached by the controller; this carries the adapter's own story.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodecError {
    pub message: String,
}

impl CodecError {
    pub fn new(message: impl Into<String>) -> Self {
        CodecError { message: message.into() }
    }
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CodecError {}

/// An encoder plus quality meter. Implementations must be callable from
/// multiple segment workers at once.
pub trait Codec: Sync {
    /// Encodes `job` at rate factor `rf` and returns an opaque stream
    /// reference — a file path for process adapters, a token for the
    /// synthetic oracle. `pass_index` lets adapters keep pass outputs apart.
    fn encode(&self, job: &EncodeJob, rf: f64, pass_index: u8) -> Result<String, CodecError>;

    /// Measures the quality of a stream previously returned by [`encode`]
    /// for the same job.
    ///
    /// [`encode`]: Codec::encode
    fn measure(&self, job: &EncodeJob, stream_ref: &str) -> Result<f64, CodecError>;
}

#[derive(Debug)]
pub enum ControllerError {
    /// An adapter failed while working on a segment.
    Codec { job_id: u64, pass_index: u8, source: CodecError },
    Model(ModelError),
    BadWindow { window_low: f64, target: f64, window_high: f64 },
    EmptyResults,
}

impl fmt::Display for ControllerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerError::Codec { job_id, pass_index, source } => {
                write!(f, "segment {job_id:016x} pass {pass_index}: {source}")
            }
            ControllerError::Model(e) => write!(f, "{e}"),
            ControllerError::BadWindow { window_low, target, window_high } => write!(
                f,
                "acceptance window must satisfy low < target < high, got {window_low} < {target} < {window_high}"
            ),
            ControllerError::EmptyResults => write!(f, "no results to aggregate"),
        }
    }
}

impl std::error::Error for ControllerError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            ControllerError::Codec { source, .. } => Some(source),
            ControllerError::Model(e) => Some(e),
            _ => None,
        }
    }
}

impl From<ModelError> for ControllerError {
    fn from(e: ModelError) -> Self {
        ControllerError::Model(e)
    }
}

/// One encode of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct PassResult {
    pub pass_index: u8,
    pub rf: f64,
    /// Pass 1 is always measured; pass 2 only in evaluation runs.
    pub measured_quality: Option<f64>,
    pub stream_ref: String,
}

/// Everything the pipeline did for one segment. `passes` holds one or two
/// entries; the accepted stream is always the last pass's.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResult {
    pub job_id: u64,
    pub label: String,
    pub passes: Vec<PassResult>,
    pub accepted_stream: String,
}

impl SegmentResult {
    pub fn total_passes(&self) -> usize {
        self.passes.len()
    }

    pub fn first_pass(&self) -> &PassResult {
        &self.passes[0]
    }

    pub fn final_pass(&self) -> &PassResult {
        self.passes.last().expect("a segment result always has at least one pass")
    }

    /// Quality view for accuracy reporting; `None` when the accepted pass
    /// was never measured (production mode).
    pub fn outcome(&self) -> Option<SegmentOutcome> {
        let first_quality = self.first_pass().measured_quality?;
        let final_quality = self.final_pass().measured_quality?;
        Some(SegmentOutcome {
            first_quality,
            final_quality,
            passes: self.total_passes(),
        })
    }
}

/// Per-segment achieved qualities, the shape [`accuracy_report`] consumes:
/// the first pass's measurement, the accepted pass's measurement, and how
/// many passes it took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentOutcome {
    pub first_quality: f64,
    pub final_quality: f64,
    pub passes: usize,
}

/// A segment the pipeline could not finish; the run records it and moves on.
#[derive(Debug)]
pub struct SegmentFailure {
    pub job_id: u64,
    pub label: String,
    pub error: ControllerError,
}

/// Aggregate of one pipeline run: successful segment results in input
/// order, plus whatever failed.
#[derive(Debug)]
pub struct RunReport {
    pub results: Vec<SegmentResult>,
    pub failures: Vec<SegmentFailure>,
}

impl RunReport {
    pub fn mean_passes(&self) -> f64 {
        if self.results.is_empty() {
            return 0.0;
        }
        let total: usize = self.results.iter().map(|r| r.total_passes()).sum();
        total as f64 / self.results.len() as f64
    }

    /// Outcomes of every result whose accepted pass was measured.
    pub fn outcomes(&self) -> Vec<SegmentOutcome> {
        self.results.iter().filter_map(|r| r.outcome()).collect()
    }

    pub fn is_clean(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Appends the first-pass feedback pair — RF, then measured quality, in
/// that order — to a base feature vector. Without feedback the base comes
/// back unchanged. The schema id gains a `+fb` suffix so a pass-2 model
/// can never be confused with a pass-1 model of the same base schema.
pub fn assemble_features(base: &FeatureVector, feedback: Option<(f64, f64)>) -> FeatureVector {
    match feedback {
        None => base.clone(),
        Some((rf1, quality1)) => {
            let mut values = base.values().to_vec();
            values.push(rf1);
            values.push(quality1);
            let schema = format!("{}+fb", base.schema_version());
            FeatureVector::new(&schema, values)
                .expect("base vector is finite and rf/quality are measured finite values")
        }
    }
}

fn codec_err(job: &EncodeJob, pass_index: u8) -> impl FnOnce(CodecError) -> ControllerError + '_ {
    move |source| ControllerError::Codec { job_id: job.id, pass_index, source }
}

/// Runs the two-pass loop for one segment. `measure_second_pass` turns on
/// the evaluation-only measurement of the accepted second-pass stream.
pub fn encode_segment_two_pass(
    job: &EncodeJob,
    features: &FeatureVector,
    model1: &ModelParams,
    model2: &ModelParams,
    codec: &dyn Codec,
    qt: &QualityTarget,
    measure_second_pass: bool,
) -> Result<SegmentResult, ControllerError> {
    model1.check_schema(features.schema_version())?;
    let rf1 = model1.forward_infer(features.values())?;
    let stream1 = codec.encode(job, rf1, 1).map_err(codec_err(job, 1))?;
    let quality1 = codec.measure(job, &stream1).map_err(codec_err(job, 1))?;
    let first = PassResult {
        pass_index: 1,
        rf: rf1,
        measured_quality: Some(quality1),
        stream_ref: stream1,
    };

    if qt.accepts(quality1) {
        let accepted_stream = first.stream_ref.clone();
        return Ok(SegmentResult {
            job_id: job.id,
            label: job.label.clone(),
            passes: vec![first],
            accepted_stream,
        });
    }

    let with_feedback = assemble_features(features, Some((rf1, quality1)));
    model2.check_schema(with_feedback.schema_version())?;
    let rf2 = model2.forward_infer(with_feedback.values())?;
    let stream2 = codec.encode(job, rf2, 2).map_err(codec_err(job, 2))?;
    let quality2 = if measure_second_pass {
        Some(codec.measure(job, &stream2).map_err(codec_err(job, 2))?)
    } else {
        None
    };
    let second = PassResult {
        pass_index: 2,
        rf: rf2,
        measured_quality: quality2,
        stream_ref: stream2.clone(),
    };
    Ok(SegmentResult {
        job_id: job.id,
        label: job.label.clone(),
        passes: vec![first, second],
        accepted_stream: stream2,
    })
}

/// Runs every job through the two-pass loop on the rayon pool. Failures do
/// not abort the run: they are collected and reported next to the
/// successes, which stay in input order.
pub fn run_pipeline(
    jobs: &[(EncodeJob, FeatureVector)],
    model1: &ModelParams,
    model2: &ModelParams,
    codec: &dyn Codec,
    qt: &QualityTarget,
    measure_second_pass: bool,
) -> RunReport {
    let per_job: Vec<Result<SegmentResult, SegmentFailure>> = jobs
        .par_iter()
        .map(|(job, features)| {
            encode_segment_two_pass(job, features, model1, model2, codec, qt, measure_second_pass)
                .map_err(|error| SegmentFailure {
                    job_id: job.id,
                    label: job.label.clone(),
                    error,
                })
        })
        .collect();

    let mut results = Vec::with_capacity(per_job.len());
    let mut failures = Vec::new();
    for item in per_job {
        match item {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }
    RunReport { results, failures }
}

/// Share (percent) of `qualities` with |q − target| strictly below `band`.
pub fn band_accuracy(qualities: &[f64], target: f64, band: f64) -> f64 {
    if qualities.is_empty() {
        return 0.0;
    }
    let hits = qualities.iter().filter(|&&q| (q - target).abs() < band).count();
    100.0 * hits as f64 / qualities.len() as f64
}

/// Accuracy table over a set of segment outcomes: per band, the share of
/// segments inside that band counting only the first pass, and counting the
/// accepted (final) pass; plus the mean number of passes.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub target: f64,
    pub bands: Vec<f64>,
    pub first_pass_pct: Vec<f64>,
    pub final_pct: Vec<f64>,
    pub mean_passes: f64,
    pub segments: usize,
}

pub fn accuracy_report(
    outcomes: &[SegmentOutcome],
    target: f64,
    bands: &[f64],
) -> Result<AccuracyReport, ControllerError> {
    if outcomes.is_empty() {
        return Err(ControllerError::EmptyResults);
    }
    let first: Vec<f64> = outcomes.iter().map(|o| o.first_quality).collect();
    let final_q: Vec<f64> = outcomes.iter().map(|o| o.final_quality).collect();
    let first_pass_pct = bands.iter().map(|&b| band_accuracy(&first, target, b)).collect();
    let final_pct = bands.iter().map(|&b| band_accuracy(&final_q, target, b)).collect();
    let mean_passes =
        outcomes.iter().map(|o| o.passes).sum::<usize>() as f64 / outcomes.len() as f64;
    Ok(AccuracyReport {
        target,
        bands: bands.to_vec(),
        first_pass_pct,
        final_pct,
        mean_passes,
        segments: outcomes.len(),
    })
}

/// Histogram of quality values over `bins` equal cells spanning [lo, hi];
/// out-of-range values land in the edge cells. For plotting achieved-VMAF
/// distributions.
pub fn quality_histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    assert!(bins >= 1 && hi > lo);
    let mut counts = vec![0usize; bins];
    let width = hi - lo;
    for &v in values {
        let cell = (((v - lo) / width) * bins as f64).floor();
        let idx = (cell.max(0.0) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
}

/// The single-RF reference point: one rate factor for the whole corpus,
/// chosen so the corpus-mean quality is as close to the target as the
/// tolerance asks.
#[derive(Debug, Clone)]
pub struct FixedRfBaseline {
    pub rf: f64,
    pub mean_quality: f64,
    /// Per-job achieved quality at the chosen RF, in job order.
    pub qualities: Vec<f64>,
}

fn qualities_at(
    jobs: &[EncodeJob],
    codec: &dyn Codec,
    rf: f64,
) -> Result<Vec<f64>, ControllerError> {
    jobs.par_iter()
        .map(|job| {
            let stream = codec.encode(job, rf, 1).map_err(codec_err(job, 1))?;
            codec.measure(job, &stream).map_err(codec_err(job, 1))
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Bisects the (monotone non-increasing) corpus-mean quality for the RF
/// whose mean lands within `tol` of the target, then reports the
/// per-segment qualities at that RF. If the target is outside what the RF
/// rails can reach, the nearest rail is returned.
pub fn fixed_rf_baseline(
    jobs: &[EncodeJob],
    codec: &dyn Codec,
    target: f64,
    tol: f64,
    max_iters: usize,
) -> Result<FixedRfBaseline, ControllerError> {
    if jobs.is_empty() {
        return Err(ControllerError::EmptyResults);
    }
    assert!(tol > 0.0 && max_iters >= 1);

    let at = |rf: f64| -> Result<FixedRfBaseline, ControllerError> {
        let qualities = qualities_at(jobs, codec, rf)?;
        let mean_quality = mean(&qualities);
        Ok(FixedRfBaseline { rf, mean_quality, qualities })
    };

    let lo = at(RF_MIN)?; // best quality the dial offers
    if lo.mean_quality <= target {
        return Ok(lo);
    }
    let hi = at(RF_MAX)?;
    if hi.mean_quality >= target {
        return Ok(hi);
    }

    let (mut a, mut b) = (RF_MIN, RF_MAX);
    let mut best = if (lo.mean_quality - target).abs() <= (hi.mean_quality - target).abs() {
        lo
    } else {
        hi
    };
    for _ in 0..max_iters {
        let mid = 0.5 * (a + b);
        let cur = at(mid)?;
        let miss = (cur.mean_quality - target).abs();
        if miss < (best.mean_quality - target).abs() {
            best = cur.clone();
        }
        if miss <= tol {
            return Ok(cur);
        }
        if cur.mean_quality > target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(best)
}
