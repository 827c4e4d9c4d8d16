//! Shot detection: split a frame sequence into one-shot segments.
//!
//! The detector is a deliberate stand-in for encoder scene-cut logic: a cut
//! is placed wherever the luma mean-absolute-difference between adjacent
//! frames exceeds a threshold, subject to a minimum shot length on both
//! sides of the cut. Downstream stages only require that segments tile the
//! video and are long enough to feature-analyze, not that cuts match any
//! particular encoder.

use crate::frameio::{mean_abs_diff, FrameSequence, Plane};

/// Default luma mean-abs-diff above which a frame starts a new shot.
pub const DEFAULT_SCENE_THRESHOLD: f64 = 12.0;
/// Default minimum shot length in frames.
pub const DEFAULT_MIN_SHOT_LEN: usize = 25;

/// Half-open frame range `[start_frame, end_frame)` of one shot, plus a
/// content hash used as the feature-cache key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start_frame: usize,
    pub end_frame: usize,
    /// FNV-1a (64-bit) over all luma bytes of the covered frames, in order.
    pub source_id: u64,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame == self.start_frame
    }

    /// The frames this segment covers.
    pub fn frames<'a>(&self, seq: &'a FrameSequence) -> &'a [Plane] {
        &seq.frames()[self.start_frame..self.end_frame]
    }
}

/// Splits `frames` at scene changes.
///
/// A boundary is placed before frame `t` when
/// `mean_abs_diff(f_{t-1}, f_t) > threshold`, the running shot already has
/// at least `min_shot_len` frames, and at least `min_shot_len` frames
/// remain after the cut (so the final shot also meets the length floor).
/// Segments always tile `[0, n)`; a video shorter than `min_shot_len`
/// yields a single short segment.
///
/// Panics if `threshold` is not positive or `min_shot_len` is zero.
pub fn detect_shots(frames: &FrameSequence, threshold: f64, min_shot_len: usize) -> Vec<Segment> {
    assert!(threshold > 0.0, "scene threshold must be positive");
    assert!(min_shot_len >= 1, "min shot length must be >= 1");

    let n = frames.len();
    let planes = frames.frames();
    let mut cuts = vec![0usize];
    let mut shot_start = 0usize;
    for t in 1..n {
        let d = mean_abs_diff(&planes[t - 1], &planes[t])
            .expect("frames of one sequence share dimensions");
        if d > threshold && t - shot_start >= min_shot_len && n - t >= min_shot_len {
            cuts.push(t);
            shot_start = t;
        }
    }
    cuts.push(n);

    cuts.windows(2)
        .map(|w| Segment {
            start_frame: w[0],
            end_frame: w[1],
            source_id: hash_frames(&planes[w[0]..w[1]]),
        })
        .collect()
}

/// FNV-1a 64-bit over the luma bytes of `planes`, frame by frame.
fn hash_frames(planes: &[Plane]) -> u64 {
    const OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET_BASIS;
    for plane in planes {
        for &b in plane.samples() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(PRIME);
        }
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sequence_of(values: &[u8]) -> FrameSequence {
        let frames = values.iter().map(|&v| Plane::filled(4, 4, v)).collect();
        FrameSequence::new(frames, 25.0)
    }

    fn assert_tiling(segments: &[Segment], n: usize) {
        assert_eq!(segments[0].start_frame, 0);
        assert_eq!(segments.last().unwrap().end_frame, n);
        for w in segments.windows(2) {
            assert_eq!(w[0].end_frame, w[1].start_frame, "gap or overlap");
        }
    }

    #[test]
    fn static_video_is_one_segment() {
        let seq = sequence_of(&[128; 30]);
        let segs = detect_shots(&seq, 12.0, 2);
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start_frame, segs[0].end_frame), (0, 30));
    }

    #[test]
    fn black_to_white_cut_lands_at_the_transition() {
        let mut values = vec![0u8; 10];
        values.extend_from_slice(&[255; 10]);
        let seq = sequence_of(&values);
        let segs = detect_shots(&seq, 12.0, 2);
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].start_frame, segs[0].end_frame), (0, 10));
        assert_eq!((segs[1].start_frame, segs[1].end_frame), (10, 20));
        assert_tiling(&segs, 20);
    }

    #[test]
    fn alternating_frames_respect_min_shot_len() {
        let values: Vec<u8> = (0..23).map(|i| if i % 2 == 0 { 0 } else { 255 }).collect();
        let seq = sequence_of(&values);
        let segs = detect_shots(&seq, 12.0, 5);
        assert_tiling(&segs, 23);
        for s in &segs {
            assert!(s.len() >= 5, "segment {s:?} shorter than min_shot_len");
        }
        // Greedy cutting: cuts at 5, 10, 15; the tail keeps the rest because
        // a cut at 20 would strand only 3 frames.
        assert_eq!(segs.len(), 4);
        assert_eq!(segs[3].len(), 8);
    }

    #[test]
    fn raising_threshold_never_adds_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let values: Vec<u8> = (0..200).map(|_| rng.gen()).collect();
        let seq = sequence_of(&values);
        let mut previous = usize::MAX;
        for threshold in [1.0, 8.0, 32.0, 96.0, 200.0] {
            let count = detect_shots(&seq, threshold, 3).len();
            assert!(
                count <= previous,
                "threshold {threshold} produced {count} segments, more than {previous}"
            );
            previous = count;
        }
    }

    #[test]
    fn short_video_yields_single_segment_even_below_min_len() {
        let seq = sequence_of(&[0, 255, 0]);
        let segs = detect_shots(&seq, 12.0, 25);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].len(), 3);
    }

    #[test]
    fn source_id_is_fnv1a_over_luma_bytes() {
        // Pin the hash: FNV-1a 64 of the single byte "a".
        let seq = FrameSequence::new(vec![Plane::new(1, 1, vec![b'a'])], 25.0);
        let segs = detect_shots(&seq, 12.0, 1);
        assert_eq!(segs[0].source_id, 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn identical_content_hashes_identically_distinct_content_does_not() {
        let a = detect_shots(&sequence_of(&[7; 30]), 12.0, 2)[0];
        let b = detect_shots(&sequence_of(&[7; 30]), 12.0, 2)[0];
        let c = detect_shots(&sequence_of(&[8; 30]), 12.0, 2)[0];
        assert_eq!(a.source_id, b.source_id);
        assert_ne!(a.source_id, c.source_id);
    }
}
