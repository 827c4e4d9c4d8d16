//! Spatial and temporal texture features: GLCM and block NCC.
//!
//! Per segment this module produces 40 values: 30 gray-level co-occurrence
//! features (3 distances × 5 Haralick features × mean/std across frames)
//! and 10 normalized cross-correlation features (5 statistics of the
//! per-pair NCC matrix × mean/std across neighbor-frame pairs).
//!
//! The textbook definitions of these features leave quantization,
//! orientation and block geometry open; the choices here (16 gray levels,
//! symmetric horizontal+vertical accumulation, 16×16 NCC tiles, 32
//! histogram bins) are fixed constants so that extracted vectors stay
//! comparable across runs and machines.

use crate::frameio::Plane;
use rayon::prelude::*;
use std::fmt;

/// Co-occurrence distances, in pixels.
pub const GLCM_DISTANCES: [usize; 3] = [1, 3, 5];
/// Gray-level count used for GLCM quantization.
pub const GLCM_LEVELS: usize = 16;
/// NCC tile edge, in pixels.
pub const NCC_BLOCK: usize = 16;
/// Histogram bins for the entropy statistic of NCC coefficient sets.
pub const NCC_HIST_BINS: usize = 32;

/// The five GLCM features, in output order.
pub const GLCM_FEATURE_NAMES: [&str; 5] =
    ["energy", "entropy", "homogeneity", "correlation", "contrast"];
/// The five summary statistics, in output order.
pub const STAT_NAMES: [&str; 5] = ["mean", "std", "skew", "kurtosis", "entropy"];

/// Symmetric pair-probability matrix over quantized gray levels.
#[derive(Debug, Clone)]
pub struct GlcmMatrix {
    levels: usize,
    probs: Vec<f64>, // levels × levels, row-major
}

impl GlcmMatrix {
    pub fn levels(&self) -> usize {
        self.levels
    }

    #[inline]
    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.levels + j]
    }
}

/// Five summary statistics of a real-valued sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatSummary {
    pub mean: f64,
    pub std: f64,
    pub skew: f64,
    pub kurtosis: f64,
    pub entropy: f64,
}

impl StatSummary {
    /// Statistics in the documented order: mean, std, skew, kurtosis, entropy.
    pub fn to_array(self) -> [f64; 5] {
        [self.mean, self.std, self.skew, self.kurtosis, self.entropy]
    }
}

#[derive(Debug)]
pub enum TextureError {
    /// Plane has no pixel pairs at the requested distance, or no full tile
    /// at the requested block size.
    PlaneTooSmall {
        width: usize,
        height: usize,
        needed: usize,
    },
    /// The two planes of an NCC pair differ in size.
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    /// Temporal features need at least two frames.
    SegmentTooShort { frames: usize },
}

impl fmt::Display for TextureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TextureError::PlaneTooSmall {
                width,
                height,
                needed,
            } => write!(
                f,
                "plane {width}x{height} too small for texture analysis (needs {needed} pixels on an axis)"
            ),
            TextureError::DimensionMismatch { left, right } => write!(
                f,
                "NCC plane dimension mismatch: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            TextureError::SegmentTooShort { frames } => write!(
                f,
                "segment has {frames} frame(s); temporal features need at least 2"
            ),
        }
    }
}

impl std::error::Error for TextureError {}

/// Gray-level co-occurrence matrix of one plane.
///
/// Pixels are quantized to `⌊v · levels / 256⌋`. Co-occurrences are counted
/// at offsets `(+distance, 0)` and `(0, +distance)`, each pair in both
/// orders, so the matrix is symmetric by construction. Counts are
/// normalized to probabilities.
pub fn glcm(plane: &Plane, distance: usize, levels: usize) -> Result<GlcmMatrix, TextureError> {
    assert!(levels >= 2, "GLCM needs at least two gray levels");
    assert!(distance >= 1, "GLCM distance must be >= 1");
    let (w, h) = (plane.width(), plane.height());
    if w <= distance && h <= distance {
        return Err(TextureError::PlaneTooSmall {
            width: w,
            height: h,
            needed: distance + 1,
        });
    }

    let q = |v: u8| (v as usize * levels) / 256;
    let mut counts = vec![0u64; levels * levels];
    let mut total = 0u64;
    // Horizontal neighbors.
    if w > distance {
        for y in 0..h {
            let row = plane.row(y);
            for x in 0..w - distance {
                let (a, b) = (q(row[x]), q(row[x + distance]));
                counts[a * levels + b] += 1;
                counts[b * levels + a] += 1;
                total += 2;
            }
        }
    }
    // Vertical neighbors.
    if h > distance {
        for y in 0..h - distance {
            for x in 0..w {
                let (a, b) = (q(plane.get(x, y)), q(plane.get(x, y + distance)));
                counts[a * levels + b] += 1;
                counts[b * levels + a] += 1;
                total += 2;
            }
        }
    }

    let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(GlcmMatrix { levels, probs })
}

/// The five Haralick features of a GLCM, in the order
/// energy, entropy, homogeneity, correlation, contrast.
///
/// Correlation of a matrix with zero marginal deviation (single occupied
/// level) is defined as 1.
pub fn glcm_features(m: &GlcmMatrix) -> [f64; 5] {
    let g = m.levels;
    let mut energy = 0.0;
    let mut entropy = 0.0;
    let mut homogeneity = 0.0;
    let mut contrast = 0.0;
    // Marginals for correlation.
    let mut marginal = vec![0.0f64; g];
    for i in 0..g {
        for j in 0..g {
            let p = m.prob(i, j);
            energy += p * p;
            if p > 0.0 {
                entropy -= p * p.log2();
            }
            let d = i.abs_diff(j);
            homogeneity += p / (1.0 + d as f64);
            contrast += (d * d) as f64 * p;
            marginal[i] += p;
        }
    }
    // Symmetric matrix: row and column marginals coincide.
    let mu: f64 = marginal.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
    let var: f64 = marginal
        .iter()
        .enumerate()
        .map(|(i, p)| (i as f64 - mu).powi(2) * p)
        .sum();
    let correlation = if var == 0.0 {
        1.0
    } else {
        let mut acc = 0.0;
        for i in 0..g {
            for j in 0..g {
                acc += (i as f64 - mu) * (j as f64 - mu) * m.prob(i, j);
            }
        }
        acc / var
    };
    [energy, entropy, homogeneity, correlation, contrast]
}

/// Block-wise normalized cross-correlation between co-located tiles.
///
/// Frames are tiled into non-overlapping `block`×`block` tiles; partial
/// edge tiles are dropped. Per tile the zero-mean correlation coefficient
/// is computed. Degenerate tiles: both constant → 1, exactly one
/// constant → 0. Returned row-major by tile.
pub fn ncc_matrix(a: &Plane, b: &Plane, block: usize) -> Result<Vec<f64>, TextureError> {
    assert!(block >= 2, "NCC block must be >= 2 pixels");
    if a.width() != b.width() || a.height() != b.height() {
        return Err(TextureError::DimensionMismatch {
            left: (a.width(), a.height()),
            right: (b.width(), b.height()),
        });
    }
    let (w, h) = (a.width(), a.height());
    if w < block || h < block {
        return Err(TextureError::PlaneTooSmall {
            width: w,
            height: h,
            needed: block,
        });
    }

    let (tiles_x, tiles_y) = (w / block, h / block);
    let area = (block * block) as f64;
    let mut coeffs = Vec::with_capacity(tiles_x * tiles_y);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let (x0, y0) = (tx * block, ty * block);
            let mut sum_a = 0.0;
            let mut sum_b = 0.0;
            for dy in 0..block {
                for dx in 0..block {
                    sum_a += a.get(x0 + dx, y0 + dy) as f64;
                    sum_b += b.get(x0 + dx, y0 + dy) as f64;
                }
            }
            let (mean_a, mean_b) = (sum_a / area, sum_b / area);
            let mut num = 0.0;
            let mut den_a = 0.0;
            let mut den_b = 0.0;
            for dy in 0..block {
                for dx in 0..block {
                    let da = a.get(x0 + dx, y0 + dy) as f64 - mean_a;
                    let db = b.get(x0 + dx, y0 + dy) as f64 - mean_b;
                    num += da * db;
                    den_a += da * da;
                    den_b += db * db;
                }
            }
            let c = if den_a == 0.0 && den_b == 0.0 {
                1.0
            } else if den_a == 0.0 || den_b == 0.0 {
                0.0
            } else {
                num / (den_a.sqrt() * den_b.sqrt())
            };
            coeffs.push(c);
        }
    }
    Ok(coeffs)
}

/// Population mean/std, standardized skew, excess kurtosis, and the
/// Shannon entropy (bits) of a `hist_bins`-bin histogram over `[min, max]`.
///
/// Constant input yields std = skew = kurtosis = entropy = 0.
pub fn moments(xs: &[f64], hist_bins: usize) -> StatSummary {
    assert!(!xs.is_empty(), "moments of an empty sequence are undefined");
    assert!(hist_bins >= 1, "histogram needs at least one bin");
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return StatSummary {
            mean,
            std: 0.0,
            skew: 0.0,
            kurtosis: 0.0,
            entropy: 0.0,
        };
    }

    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for x in xs {
        let z = (x - mean) / std;
        m3 += z.powi(3);
        m4 += z.powi(4);
    }
    let skew = m3 / n;
    let kurtosis = m4 / n - 3.0;

    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let entropy = if hi > lo {
        let mut counts = vec![0u64; hist_bins];
        for x in xs {
            let bin = (((x - lo) / (hi - lo)) * hist_bins as f64) as usize;
            counts[bin.min(hist_bins - 1)] += 1;
        }
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum()
    } else {
        0.0
    };

    StatSummary {
        mean,
        std,
        skew,
        kurtosis,
        entropy,
    }
}

/// The 40 spatial/temporal texture values of one segment.
///
/// Layout: for each distance in [`GLCM_DISTANCES`], for each feature in
/// [`GLCM_FEATURE_NAMES`], the (mean, std) of that feature across frames —
/// 30 values. Then for each statistic in [`STAT_NAMES`], the (mean, std)
/// of that per-pair NCC statistic across neighbor pairs — 10 values.
pub fn spatial_temporal_vector(frames: &[Plane]) -> Result<Vec<f64>, TextureError> {
    if frames.len() < 2 {
        return Err(TextureError::SegmentTooShort {
            frames: frames.len(),
        });
    }

    let mut out = Vec::with_capacity(40);
    for &d in &GLCM_DISTANCES {
        let per_frame: Vec<[f64; 5]> = frames
            .par_iter()
            .map(|f| glcm(f, d, GLCM_LEVELS).map(|m| glcm_features(&m)))
            .collect::<Result<_, _>>()?;
        for feat in 0..5 {
            let values: Vec<f64> = per_frame.iter().map(|v| v[feat]).collect();
            let (m, s) = mean_std(&values);
            out.push(m);
            out.push(s);
        }
    }

    let pair_stats: Vec<StatSummary> = (0..frames.len() - 1)
        .into_par_iter()
        .map(|i| {
            ncc_matrix(&frames[i], &frames[i + 1], NCC_BLOCK)
                .map(|coeffs| moments(&coeffs, NCC_HIST_BINS))
        })
        .collect::<Result<_, _>>()?;
    for stat in 0..5 {
        let values: Vec<f64> = pair_stats.iter().map(|s| s.to_array()[stat]).collect();
        let (m, s) = mean_std(&values);
        out.push(m);
        out.push(s);
    }

    debug_assert_eq!(out.len(), 40);
    Ok(out)
}

/// Names of the 40 values of [`spatial_temporal_vector`], in output order.
pub fn spatial_temporal_names() -> Vec<String> {
    let mut names = Vec::with_capacity(40);
    for d in GLCM_DISTANCES {
        for feat in GLCM_FEATURE_NAMES {
            names.push(format!("glcm_d{d}_{feat}_mean"));
            names.push(format!("glcm_d{d}_{feat}_std"));
        }
    }
    for stat in STAT_NAMES {
        names.push(format!("ncc_{stat}_mean"));
        names.push(format!("ncc_{stat}_std"));
    }
    names
}

/// Population mean and standard deviation.
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
