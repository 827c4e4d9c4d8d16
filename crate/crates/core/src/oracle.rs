//! Synthetic encoder + quality meter with analytically invertible
//! RF→quality curves.
//!
//! Real RF–VMAF responses are monotone and saturating, so a logistic
//! family stands in for them: `V(rf) = c / (1 + exp(k·(rf − m)))` plus
//! optional seeded Gaussian measurement noise. Because the clean curve
//! inverts in closed form, every downstream result — labels, two-pass
//! outcomes, baselines — can be checked against exact ground truth, which
//! no real encoder allows.
//!
//! [`curve_from_features`] ties curve parameters to a segment's complexity
//! descriptors with a fixed affine map, so "content" and "best RF" are
//! genuinely related and a prediction network has something to learn.

use crate::controller::{Codec, CodecError, EncodeJob};
use crate::{RF_MAX, RF_MIN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};

/// (midpoint, slope) for trivially easy content: the curve stays high until
/// late on the RF dial and falls steeply.
pub const EASY_CONTENT_ANCHOR: (f64, f64) = (38.0, 0.35);
/// (midpoint, slope) for maximally complex content: quality degrades early
/// and gradually.
pub const HARD_CONTENT_ANCHOR: (f64, f64) = (16.0, 0.18);

#[derive(Debug)]
pub enum OracleError {
    /// A curve parameter violates its range.
    BadParam { name: &'static str, value: f64 },
    /// Labels only exist strictly below the curve's ceiling.
    TargetNotBelowCeiling { target: f64, ceiling: f64 },
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::BadParam { name, value } => {
                write!(f, "curve parameter `{name}` = {value} out of range")
            }
            OracleError::TargetNotBelowCeiling { target, ceiling } => {
                write!(f, "target quality {target} not reachable under ceiling {ceiling}")
            }
        }
    }
}

impl std::error::Error for OracleError {}

/// One synthetic RF→quality curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticCurveParams {
    /// RF at which quality is half the ceiling.
    pub midpoint: f64,
    /// Steepness per RF unit (> 0; larger = sharper drop).
    pub slope: f64,
    /// Quality as RF → −∞; defaults to 100.
    pub ceiling: f64,
    /// Standard deviation of the measurement noise; 0 = exact curve.
    pub noise_sigma: f64,
}

impl SyntheticCurveParams {
    /// Noise-free curve with ceiling 100.
    pub fn new(midpoint: f64, slope: f64) -> Result<Self, OracleError> {
        Self::with_all(midpoint, slope, 100.0, 0.0)
    }

    pub fn with_all(
        midpoint: f64,
        slope: f64,
        ceiling: f64,
        noise_sigma: f64,
    ) -> Result<Self, OracleError> {
        if !midpoint.is_finite() || !(RF_MIN..=RF_MAX).contains(&midpoint) {
            return Err(OracleError::BadParam { name: "midpoint", value: midpoint });
        }
        if !slope.is_finite() || slope <= 0.0 {
            return Err(OracleError::BadParam { name: "slope", value: slope });
        }
        if !ceiling.is_finite() || ceiling <= 0.0 || ceiling > 100.0 {
            return Err(OracleError::BadParam { name: "ceiling", value: ceiling });
        }
        if !noise_sigma.is_finite() || noise_sigma < 0.0 {
            return Err(OracleError::BadParam { name: "noise_sigma", value: noise_sigma });
        }
        Ok(SyntheticCurveParams { midpoint, slope, ceiling, noise_sigma })
    }

    /// Same curve with a different measurement-noise level.
    pub fn with_noise(self, noise_sigma: f64) -> Result<Self, OracleError> {
        Self::with_all(self.midpoint, self.slope, self.ceiling, noise_sigma)
    }
}

/// Quality measured at `rf`: the logistic curve plus seeded Gaussian noise,
/// clamped to the metric's [0, 100] scale. With `noise_sigma` 0 the value
/// is the exact curve and `seed` is ignored, so noise-free runs are
/// bit-reproducible regardless of seeding discipline.
pub fn synth_quality(p: &SyntheticCurveParams, rf: f64, seed: u64) -> f64 {
    assert!(
        (RF_MIN..=RF_MAX).contains(&rf),
        "rf {rf} outside the encoder dial"
    );
    let clean = p.ceiling / (1.0 + (p.slope * (rf - p.midpoint)).exp());
    let value = if p.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, p.noise_sigma)
            .expect("noise_sigma validated finite and non-negative")
            .sample(&mut rng);
        clean + noise
    } else {
        clean
    };
    value.clamp(0.0, 100.0)
}

/// The exact RF at which the clean curve equals `target`, clamped to the
/// encoder dial. This is the ground-truth label the search in
/// [`crate::labeler`] approximates.
pub fn synth_label(p: &SyntheticCurveParams, target: f64) -> Result<f64, OracleError> {
    if !target.is_finite() || target <= 0.0 {
        return Err(OracleError::BadParam { name: "target", value: target });
    }
    if target >= p.ceiling {
        return Err(OracleError::TargetNotBelowCeiling { target, ceiling: p.ceiling });
    }
    let rf = p.midpoint + (p.ceiling / target - 1.0).ln() / p.slope;
    Ok(rf.clamp(RF_MIN, RF_MAX))
}

/// Collapses complexity descriptors into one score in [0, 1]. Geometric
/// weights (1/2, 1/4, …, normalized) keep leading descriptors dominant;
/// inputs are clamped to [0, 1] and non-finite entries count as 0.
fn complexity_score(descriptors: &[f64]) -> f64 {
    if descriptors.is_empty() {
        return 0.0;
    }
    let mut weighted = 0.0;
    let mut total = 0.0;
    let mut w = 0.5;
    for &d in descriptors {
        let c = if d.is_finite() { d.clamp(0.0, 1.0) } else { 0.0 };
        weighted += w * c;
        total += w;
        w *= 0.5;
    }
    weighted / total
}

/// Deterministic map from complexity descriptors to a curve: an affine
/// interpolation between [`EASY_CONTENT_ANCHOR`] (score 0) and
/// [`HARD_CONTENT_ANCHOR`] (score 1). Harder content → lower midpoint,
/// shallower slope. Noise-free; add noise with
/// [`SyntheticCurveParams::with_noise`].
pub fn curve_from_features(descriptors: &[f64]) -> SyntheticCurveParams {
    let t = complexity_score(descriptors);
    let (m0, k0) = EASY_CONTENT_ANCHOR;
    let (m1, k1) = HARD_CONTENT_ANCHOR;
    SyntheticCurveParams {
        midpoint: m0 + (m1 - m0) * t,
        slope: k0 + (k1 - k0) * t,
        ceiling: 100.0,
        noise_sigma: 0.0,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a base seed, a stream discriminator, and the exact RF bits into
/// one noise seed, so every (segment, pass, rf) measurement draws its own
/// reproducible noise.
pub fn mix_seed(base: u64, stream: u64, rf: f64) -> u64 {
    splitmix64(base ^ splitmix64(stream ^ splitmix64(rf.to_bits())))
}

/// One synthetic segment: descriptors playing the role of segment features,
/// the quality curve derived from them, and the segment's noise seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSegment {
    pub id: u64,
    pub seed: u64,
    pub descriptors: Vec<f64>,
    pub curve: SyntheticCurveParams,
}

/// Generates a reproducible corpus: descriptors uniform in [0, 1]^dim,
/// curves from [`curve_from_features`] at the given noise level, ids
/// sequential from 0.
pub fn generate_corpus(
    count: usize,
    descriptor_dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<SyntheticSegment>, OracleError> {
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(OracleError::BadParam { name: "noise_sigma", value: noise_sigma });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(count);
    for id in 0..count as u64 {
        let descriptors: Vec<f64> = (0..descriptor_dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        let curve = curve_from_features(&descriptors).with_noise(noise_sigma)?;
        corpus.push(SyntheticSegment {
            id,
            seed: rng.gen(),
            descriptors,
            curve,
        });
    }
    Ok(corpus)
}

#[derive(Debug)]
pub enum CorpusError {
    BadLine { line: usize, message: String },
    Io(io::Error),
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusError::BadLine { line, message } => {
                write!(f, "corpus line {line}: {message}")
            }
            CorpusError::Io(e) => write!(f, "corpus i/o: {e}"),
        }
    }
}

impl std::error::Error for CorpusError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CorpusError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for CorpusError {
    fn from(e: io::Error) -> Self {
        CorpusError::Io(e)
    }
}

/// One segment per line: hex id, hex seed, the four curve parameters, then
/// the descriptors. Floats print in round-trip-exact form.
pub fn write_corpus<W: Write>(segments: &[SyntheticSegment], w: &mut W) -> io::Result<()> {
    for s in segments {
        write!(
            w,
            "{:016x} {:016x} {} {} {} {}",
            s.id, s.seed, s.curve.midpoint, s.curve.slope, s.curve.ceiling, s.curve.noise_sigma
        )?;
        for d in &s.descriptors {
            write!(w, " {d}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<SyntheticSegment>, CorpusError> {
    let mut corpus = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CorpusError::BadLine { line: line_no, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 6 {
            return Err(bad(format!("expected at least 6 fields, found {}", fields.len())));
        }
        let id = u64::from_str_radix(fields[0], 16)
            .map_err(|e| bad(format!("bad id `{}`: {e}", fields[0])))?;
        let seed = u64::from_str_radix(fields[1], 16)
            .map_err(|e| bad(format!("bad seed `{}`: {e}", fields[1])))?;
        let mut nums = Vec::with_capacity(fields.len() - 2);
        for f in &fields[2..] {
            nums.push(
                f.parse::<f64>().map_err(|e| bad(format!("bad number `{f}`: {e}")))?,
            );
        }
        let curve = SyntheticCurveParams::with_all(nums[0], nums[1], nums[2], nums[3])
            .map_err(|e| bad(e.to_string()))?;
        corpus.push(SyntheticSegment {
            id,
            seed,
            descriptors: nums[4..].to_vec(),
            curve,
        });
    }
    Ok(corpus)
}

/// In-memory [`Codec`] over a synthetic corpus. "Encoding" returns a token
/// embedding the segment, pass, and exact RF bits; "measuring" replays the
/// token through the segment's curve with noise seeded per
/// (segment, pass, rf), so identical runs measure identical values.
pub struct OracleCodec {
    segments: HashMap<u64, SyntheticSegment>,
}

impl OracleCodec {
    pub fn new(segments: &[SyntheticSegment]) -> Self {
        OracleCodec {
            segments: segments.iter().map(|s| (s.id, s.clone())).collect(),
        }
    }

    pub fn segment(&self, id: u64) -> Option<&SyntheticSegment> {
        self.segments.get(&id)
    }
}

impl Codec for OracleCodec {
    fn encode(&self, job: &EncodeJob, rf: f64, pass_index: u8) -> Result<String, CodecError> {
        if !self.segments.contains_key(&job.id) {
            return Err(CodecError::new(format!("unknown synthetic segment {:016x}", job.id)));
        }
        Ok(format!("synth:{:016x}:p{pass_index}:{:016x}", job.id, rf.to_bits()))
    }

    fn measure(&self, job: &EncodeJob, stream_ref: &str) -> Result<f64, CodecError> {
        let parts: Vec<&str> = stream_ref.split(':').collect();
        let malformed = || CodecError::new(format!("malformed stream ref `{stream_ref}`"));
        if parts.len() != 4 || parts[0] != "synth" {
            return Err(malformed());
        }
        let id = u64::from_str_radix(parts[1], 16).map_err(|_| malformed())?;
        let pass: u64 = parts[2].strip_prefix('p').and_then(|s| s.parse().ok()).ok_or_else(malformed)?;
        let rf = f64::from_bits(u64::from_str_radix(parts[3], 16).map_err(|_| malformed())?);
        if id != job.id {
            return Err(CodecError::new(format!(
                "stream {stream_ref} belongs to segment {id:016x}, not {:016x}",
                job.id
            )));
        }
        let segment = self
            .segments
            .get(&id)
            .ok_or_else(|| CodecError::new(format!("unknown synthetic segment {id:016x}")))?;
        Ok(synth_quality(&segment.curve, rf, mix_seed(segment.seed, pass, rf)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn midpoint_quality_is_half_the_ceiling() {
        let p = SyntheticCurveParams::new(30.0, 0.25).unwrap();
        assert_eq!(synth_quality(&p, 30.0, 0), 50.0);
        let low = SyntheticCurveParams::with_all(20.0, 0.3, 80.0, 0.0).unwrap();
        assert_eq!(synth_quality(&low, 20.0, 0), 40.0);
    }

    #[test]
    fn closed_form_inversion_matches_the_reference_value() {
        let p = SyntheticCurveParams::new(30.0, 0.25).unwrap();
        let rf_star = synth_label(&p, 91.0).unwrap();
        assert!((rf_star - 20.746).abs() < 1e-3, "rf* = {rf_star}");
        assert!((synth_quality(&p, rf_star, 7) - 91.0).abs() < 1e-6);
    }

    #[test]
    fn label_then_measure_is_the_identity_off_the_rails() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..500 {
            let d: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let p = curve_from_features(&d);
            let target = rng.gen_range(5.0..95.0);
            let rf = synth_label(&p, target).unwrap();
            if rf > RF_MIN && rf < RF_MAX {
                let v = synth_quality(&p, rf, 0);
                assert!((v - target).abs() < 1e-9, "target {target}, got {v}");
            }
        }
    }

    #[test]
    fn noise_free_curves_strictly_decrease() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..1000 {
            let d: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let p = curve_from_features(&d);
            let rf1 = rng.gen_range(0.0..51.0);
            let rf2 = rng.gen_range(0.0..51.0);
            let (lo, hi) = if rf1 < rf2 { (rf1, rf2) } else { (rf2, rf1) };
            if hi - lo > 1e-9 {
                assert!(synth_quality(&p, lo, 0) > synth_quality(&p, hi, 0));
            }
        }
    }

    #[test]
    fn labels_clamp_at_the_dial_ends() {
        // m=2, k=1: the exact inverse for target 91 is 2 + ln(100/91 − 1) ≈ −0.31.
        let p = SyntheticCurveParams::new(2.0, 1.0).unwrap();
        assert_eq!(synth_label(&p, 91.0).unwrap(), 0.0);
        // Mirror case: easy curve, absurdly low target → rail 51.
        let q = SyntheticCurveParams::new(50.0, 2.0).unwrap();
        assert_eq!(synth_label(&q, 5.0).unwrap(), 51.0);
    }

    #[test]
    fn half_ceiling_target_labels_at_the_midpoint() {
        let p = SyntheticCurveParams::new(33.0, 0.2).unwrap();
        let rf = synth_label(&p, 50.0).unwrap();
        assert!((rf - 33.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_targets_are_errors() {
        let p = SyntheticCurveParams::with_all(30.0, 0.25, 95.0, 0.0).unwrap();
        assert!(matches!(
            synth_label(&p, 95.0),
            Err(OracleError::TargetNotBelowCeiling { .. })
        ));
        assert!(matches!(
            synth_label(&p, 96.0),
            Err(OracleError::TargetNotBelowCeiling { .. })
        ));
        assert!(matches!(synth_label(&p, 0.0), Err(OracleError::BadParam { .. })));
    }

    #[test]
    fn invalid_curve_parameters_are_rejected() {
        assert!(SyntheticCurveParams::new(-1.0, 0.2).is_err());
        assert!(SyntheticCurveParams::new(52.0, 0.2).is_err());
        assert!(SyntheticCurveParams::new(30.0, 0.0).is_err());
        assert!(SyntheticCurveParams::new(30.0, -0.2).is_err());
        assert!(SyntheticCurveParams::with_all(30.0, 0.2, 0.0, 0.0).is_err());
        assert!(SyntheticCurveParams::with_all(30.0, 0.2, 101.0, 0.0).is_err());
        assert!(SyntheticCurveParams::with_all(30.0, 0.2, 100.0, -0.1).is_err());
    }

    #[test]
    fn descriptor_anchors_map_exactly() {
        let easy = curve_from_features(&[0.0, 0.0, 0.0]);
        assert_eq!((easy.midpoint, easy.slope), EASY_CONTENT_ANCHOR);
        let hard = curve_from_features(&[1.0, 1.0, 1.0]);
        assert_eq!(hard.midpoint, HARD_CONTENT_ANCHOR.0);
        assert!((hard.slope - HARD_CONTENT_ANCHOR.1).abs() < 1e-12);
        // Empty descriptors mean "no information" = easiest content.
        let none = curve_from_features(&[]);
        assert_eq!((none.midpoint, none.slope), EASY_CONTENT_ANCHOR);
    }

    #[test]
    fn descriptor_map_is_bounded_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..300 {
            let d: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
            let delta = rng.gen_range(0.0..0.1);
            let d2: Vec<f64> = d
                .iter()
                .map(|v| (v + rng.gen_range(-delta..=delta)).clamp(0.0, 1.0))
                .collect();
            let a = curve_from_features(&d);
            let b = curve_from_features(&d2);
            // Score moves at most max|Δd| (weights sum to 1), so the curve
            // moves at most the anchor gap times that.
            assert!((a.midpoint - b.midpoint).abs() <= 22.0 * delta + 1e-9);
            assert!((a.slope - b.slope).abs() <= 0.17 * delta + 1e-9);
        }
    }

    #[test]
    fn seeded_noise_is_reproducible_and_calibrated() {
        let p = SyntheticCurveParams::with_all(30.0, 0.25, 100.0, 1.0).unwrap();
        assert_eq!(synth_quality(&p, 30.0, 42), synth_quality(&p, 30.0, 42));
        assert_ne!(synth_quality(&p, 30.0, 42), synth_quality(&p, 30.0, 43));

        let samples: Vec<f64> = (0..2000).map(|s| synth_quality(&p, 30.0, s)).collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        assert!((mean - 50.0).abs() < 0.15, "noisy mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.1, "noisy std {}", var.sqrt());
    }

    #[test]
    fn quality_stays_on_the_metric_scale_under_heavy_noise() {
        let p = SyntheticCurveParams::with_all(30.0, 0.25, 100.0, 200.0).unwrap();
        for seed in 0..200 {
            let v = synth_quality(&p, 25.0, seed);
            assert!((0.0..=100.0).contains(&v));
        }
    }

    #[test]
    fn mix_seed_separates_nearby_inputs() {
        let mut seen = HashSet::new();
        for base in 0..4u64 {
            for stream in 0..4u64 {
                for rf_step in 0..16u64 {
                    let rf = rf_step as f64 * 0.25;
                    seen.insert(mix_seed(base, stream, rf));
                }
            }
        }
        assert_eq!(seen.len(), 4 * 4 * 16);
    }

    #[test]
    fn corpus_generation_is_deterministic_and_round_trips() {
        let a = generate_corpus(50, 8, 0.3, 77).unwrap();
        let b = generate_corpus(50, 8, 0.3, 77).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(50, 8, 0.3, 78).unwrap();
        assert_ne!(a, c);

        let mut buf = Vec::new();
        write_corpus(&a, &mut buf).unwrap();
        let back = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn corpus_reader_reports_the_offending_line() {
        let mut buf = Vec::new();
        write_corpus(&generate_corpus(3, 2, 0.0, 1).unwrap(), &mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("0000000000000003 000000000000000a not-a-number 0.2 100 0\n");
        match read_corpus(text.as_bytes()) {
            Err(CorpusError::BadLine { line: 4, message }) => {
                assert!(message.contains("not-a-number"));
            }
            other => panic!("expected BadLine at 4, got {other:?}"),
        }
    }

    #[test]
    fn codec_measures_the_stream_it_encoded() {
        let corpus = generate_corpus(5, 4, 0.5, 9).unwrap();
        let codec = OracleCodec::new(&corpus);
        let job = EncodeJob::new(2, "seg2");
        let stream = codec.encode(&job, 23.75, 1).unwrap();
        let v = codec.measure(&job, &stream).unwrap();
        let seg = codec.segment(2).unwrap();
        assert_eq!(v, synth_quality(&seg.curve, 23.75, mix_seed(seg.seed, 1, 23.75)));
        // Measuring twice replays the same noise.
        assert_eq!(v, codec.measure(&job, &stream).unwrap());
    }

    #[test]
    fn codec_rejects_unknown_segments_and_foreign_streams() {
        let corpus = generate_corpus(2, 3, 0.0, 10).unwrap();
        let codec = OracleCodec::new(&corpus);
        assert!(codec.encode(&EncodeJob::new(99, "nope"), 20.0, 1).is_err());

        let job0 = EncodeJob::new(0, "seg0");
        let job1 = EncodeJob::new(1, "seg1");
        let stream0 = codec.encode(&job0, 20.0, 1).unwrap();
        let err = codec.measure(&job1, &stream0).unwrap_err();
        assert!(err.message.contains("belongs to"));
        assert!(codec.measure(&job0, "garbage").is_err());
    }
}
