//! Pre-coding complexity analysis: a fast stand-in encoder pass.
//!
//! The segment's frames are conceptually reorganized into an alternating
//! I/P sequence of 2n−2 entries — every middle frame coded once intra and
//! once inter against its predecessor — and cheap per-frame coding
//! statistics are collected from each entry. Per named feature, five
//! summary statistics across frames form the pre-coding feature block.
//!
//! Real encoder statistics can replace the built-in analyzer through the
//! stats-log CSV adapter ([`write_stats_log`]/[`parse_stats_log`]); both
//! paths share the same aggregation, so identical per-frame values yield
//! identical feature vectors.

use crate::features::FeatureSchema;
use crate::frameio::Plane;
use crate::texture::moments;
use rayon::prelude::*;
use std::fmt;
use std::io::{BufRead, Write};

/// Analysis block edge, in pixels. Partial edge blocks are dropped.
pub const PRECODE_BLOCK: usize = 16;
/// Full-search motion estimation range, ± pixels per axis.
pub const PRECODE_SEARCH_RANGE: usize = 8;
/// Histogram bins for the entropy statistic of pre-coding series.
pub const PRECODE_HIST_BINS: usize = 16;
/// Luma variance below which a block counts as the 4×4 size class (and as
/// flat); between the two thresholds as 8×8; above as 16×16.
pub const VAR_SPLIT_4: f64 = 25.0;
pub const VAR_SPLIT_16: f64 = 400.0;

/// Built-in intra feature names, in [`IntraFrameStats::values`] order.
pub const INTRA_FEATURE_NAMES: [&str; 10] = [
    "coded_bytes",
    "ratio_mb_4x4",
    "ratio_mb_8x8",
    "ratio_mb_16x16",
    "ratio_mode_dc",
    "ratio_mode_planar_like",
    "ratio_mode_directional",
    "mean_residual_energy",
    "mean_gradient_magnitude",
    "ratio_flat_blocks",
];

/// Built-in inter feature names, in [`InterFrameStats::values`] order.
pub const INTER_FEATURE_NAMES: [&str; 8] = [
    "coded_bytes",
    "ratio_intra_blocks",
    "ratio_inter_blocks",
    "ratio_skip_blocks",
    "mean_mv_length",
    "std_mv_length",
    "mean_sad_after_me",
    "ratio_zero_mv",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodingMode {
    Intra,
    Inter,
}

impl CodingMode {
    pub fn letter(self) -> char {
        match self {
            CodingMode::Intra => 'I',
            CodingMode::Inter => 'P',
        }
    }
}

/// One entry of the reorganized coding sequence. `frame` indexes the
/// original segment; an `Inter` entry is predicted from frame `frame − 1`
/// (the immediately preceding intra entry's frame).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrecodeEntry {
    pub frame: usize,
    pub mode: CodingMode,
}

#[derive(Debug)]
pub enum PrecodeError {
    /// Pre-coding needs at least two frames.
    TooFewFrames { frames: usize },
    /// Inter analysis got differently sized frame and reference.
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    /// The built-in analyzer only produces the default v1 feature lists.
    SchemaUnsupported { version: String },
    /// Aggregation got no rows for one coding mode.
    EmptyMode { mode: CodingMode },
    /// A stats row's value count does not match the schema.
    RowWidth {
        mode: CodingMode,
        expected: usize,
        got: usize,
    },
}

impl fmt::Display for PrecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrecodeError::TooFewFrames { frames } => {
                write!(f, "pre-coding needs >= 2 frames, got {frames}")
            }
            PrecodeError::DimensionMismatch { left, right } => write!(
                f,
                "inter analysis dimension mismatch: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            PrecodeError::SchemaUnsupported { version } => write!(
                f,
                "built-in pre-coder cannot produce schema `{version}` (use the stats-log adapter)"
            ),
            PrecodeError::EmptyMode { mode } => {
                write!(f, "no {} rows to aggregate", mode.letter())
            }
            PrecodeError::RowWidth {
                mode,
                expected,
                got,
            } => write!(
                f,
                "{} stats row has {got} values, schema expects {expected}",
                mode.letter()
            ),
        }
    }
}

impl std::error::Error for PrecodeError {}

/// The I/P reorganization of a segment:
/// `[(f0,I),(f1,P),(f1,I),(f2,P),…,(f_{n−2},I),(f_{n−1},P)]`, 2n−2 entries.
/// Every frame except the first and last appears once per mode.
pub fn reorganize(frames: &[Plane]) -> Result<Vec<PrecodeEntry>, PrecodeError> {
    let n = frames.len();
    if n < 2 {
        return Err(PrecodeError::TooFewFrames { frames: n });
    }
    let mut entries = Vec::with_capacity(2 * n - 2);
    for i in 0..n - 1 {
        entries.push(PrecodeEntry {
            frame: i,
            mode: CodingMode::Intra,
        });
        entries.push(PrecodeEntry {
            frame: i + 1,
            mode: CodingMode::Inter,
        });
    }
    Ok(entries)
}

/// Per-frame statistics of one intra analysis pass (default schema).
#[derive(Debug, Clone, PartialEq)]
pub struct IntraFrameStats {
    pub coded_bytes: f64,
    pub ratio_mb_4x4: f64,
    pub ratio_mb_8x8: f64,
    pub ratio_mb_16x16: f64,
    pub ratio_mode_dc: f64,
    pub ratio_mode_planar_like: f64,
    pub ratio_mode_directional: f64,
    pub mean_residual_energy: f64,
    pub mean_gradient_magnitude: f64,
    pub ratio_flat_blocks: f64,
}

impl IntraFrameStats {
    /// Values in [`INTRA_FEATURE_NAMES`] order.
    pub fn values(&self) -> [f64; 10] {
        [
            self.coded_bytes,
            self.ratio_mb_4x4,
            self.ratio_mb_8x8,
            self.ratio_mb_16x16,
            self.ratio_mode_dc,
            self.ratio_mode_planar_like,
            self.ratio_mode_directional,
            self.mean_residual_energy,
            self.mean_gradient_magnitude,
            self.ratio_flat_blocks,
        ]
    }
}

/// Per-frame statistics of one inter analysis pass (default schema).
#[derive(Debug, Clone, PartialEq)]
pub struct InterFrameStats {
    pub coded_bytes: f64,
    pub ratio_intra_blocks: f64,
    pub ratio_inter_blocks: f64,
    pub ratio_skip_blocks: f64,
    pub mean_mv_length: f64,
    pub std_mv_length: f64,
    pub mean_sad_after_me: f64,
    pub ratio_zero_mv: f64,
}

impl InterFrameStats {
    /// Values in [`INTER_FEATURE_NAMES`] order.
    pub fn values(&self) -> [f64; 8] {
        [
            self.coded_bytes,
            self.ratio_intra_blocks,
            self.ratio_inter_blocks,
            self.ratio_skip_blocks,
            self.mean_mv_length,
            self.std_mv_length,
            self.mean_sad_after_me,
            self.ratio_zero_mv,
        ]
    }
}

/// Intra predictors, contested in this order with first-strict-minimum
/// tie-breaking (directional modes before DC before planar, mirroring
/// H.264 mode numbering).
#[derive(Clone, Copy, PartialEq, Eq)]
enum IntraMode {
    Vertical,
    Horizontal,
    Dc,
    Planar,
}

const INTRA_MODE_ORDER: [IntraMode; 4] = [
    IntraMode::Vertical,
    IntraMode::Horizontal,
    IntraMode::Dc,
    IntraMode::Planar,
];

/// Intra analysis of one frame over full `block`×`block` blocks.
///
/// Reference samples are the original pixels above and left of each block
/// (reconstruction equals source in this analysis pass). A missing
/// reference side falls back to mid-gray 128, except DC with no references
/// at all, which predicts the block's own mean — an encoder would code
/// that DC coefficient directly, and this keeps a constant frame at
/// exactly zero coded bytes.
pub fn analyze_intra(frame: &Plane, block: usize) -> IntraFrameStats {
    assert!(block >= 2, "analysis block must be >= 2 pixels");
    assert!(
        frame.width() >= block && frame.height() >= block,
        "frame must fit at least one analysis block"
    );
    let (w, h) = (frame.width(), frame.height());
    let (bx, by) = (w / block, h / block);
    let blocks = (bx * by) as f64;
    let area = (block * block) as f64;

    let mut coded_bytes = 0.0;
    let mut size_counts = [0usize; 3]; // 4x4 / 8x8 / 16x16 classes
    let mut mode_counts = [0usize; 3]; // dc / planar / directional
    let mut residual_energy = 0.0;
    let mut gradient_sum = 0.0;
    let mut flat_count = 0usize;

    for tile_y in 0..by {
        for tile_x in 0..bx {
            let (x0, y0) = (tile_x * block, tile_y * block);
            let top: Option<Vec<f64>> = (y0 > 0)
                .then(|| (0..block).map(|dx| frame.get(x0 + dx, y0 - 1) as f64).collect());
            let left: Option<Vec<f64>> = (x0 > 0)
                .then(|| (0..block).map(|dy| frame.get(x0 - 1, y0 + dy) as f64).collect());
            let corner = (x0 > 0 && y0 > 0).then(|| frame.get(x0 - 1, y0 - 1) as f64);

            let mut mean = 0.0;
            for dy in 0..block {
                for dx in 0..block {
                    mean += frame.get(x0 + dx, y0 + dy) as f64;
                }
            }
            mean /= area;

            let dc_pred = match (&top, &left) {
                (Some(t), Some(l)) => {
                    (t.iter().sum::<f64>() + l.iter().sum::<f64>()) / (2.0 * block as f64)
                }
                (Some(t), None) => t.iter().sum::<f64>() / block as f64,
                (None, Some(l)) => l.iter().sum::<f64>() / block as f64,
                (None, None) => mean, // no neighbors: code the DC directly
            };

            let predict = |mode: IntraMode, dx: usize, dy: usize| -> f64 {
                let t = |i: usize| top.as_ref().map_or(128.0, |t| t[i]);
                let l = |i: usize| left.as_ref().map_or(128.0, |l| l[i]);
                match mode {
                    IntraMode::Vertical => t(dx),
                    IntraMode::Horizontal => l(dy),
                    IntraMode::Dc => dc_pred,
                    IntraMode::Planar => {
                        (t(dx) + l(dy) - corner.unwrap_or(128.0)).clamp(0.0, 255.0)
                    }
                }
            };

            let mut best_mode = IntraMode::Vertical;
            let mut best_sad = f64::INFINITY;
            for mode in INTRA_MODE_ORDER {
                let mut sad = 0.0;
                for dy in 0..block {
                    for dx in 0..block {
                        sad += (frame.get(x0 + dx, y0 + dy) as f64 - predict(mode, dx, dy)).abs();
                    }
                }
                if sad < best_sad {
                    best_sad = sad;
                    best_mode = mode;
                }
            }

            coded_bytes += (1.0 + best_sad).log2();
            match best_mode {
                IntraMode::Dc => mode_counts[0] += 1,
                IntraMode::Planar => mode_counts[1] += 1,
                IntraMode::Vertical | IntraMode::Horizontal => mode_counts[2] += 1,
            }

            let mut energy = 0.0;
            for dy in 0..block {
                for dx in 0..block {
                    let r = frame.get(x0 + dx, y0 + dy) as f64 - predict(best_mode, dx, dy);
                    energy += r * r;
                }
            }
            residual_energy += energy / area;

            let mut var = 0.0;
            for dy in 0..block {
                for dx in 0..block {
                    var += (frame.get(x0 + dx, y0 + dy) as f64 - mean).powi(2);
                }
            }
            var /= area;
            if var < VAR_SPLIT_4 {
                size_counts[0] += 1;
                flat_count += 1;
            } else if var < VAR_SPLIT_16 {
                size_counts[1] += 1;
            } else {
                size_counts[2] += 1;
            }

            let mut grad = 0.0;
            let mut grad_n = 0usize;
            for dy in 0..block {
                for dx in 0..block {
                    let (x, y) = (x0 + dx, y0 + dy);
                    if x + 1 < w && y + 1 < h {
                        let gx = frame.get(x + 1, y) as f64 - frame.get(x, y) as f64;
                        let gy = frame.get(x, y + 1) as f64 - frame.get(x, y) as f64;
                        grad += (gx * gx + gy * gy).sqrt();
                        grad_n += 1;
                    }
                }
            }
            if grad_n > 0 {
                gradient_sum += grad / grad_n as f64;
            }
        }
    }

    IntraFrameStats {
        coded_bytes,
        ratio_mb_4x4: size_counts[0] as f64 / blocks,
        ratio_mb_8x8: size_counts[1] as f64 / blocks,
        ratio_mb_16x16: size_counts[2] as f64 / blocks,
        ratio_mode_dc: mode_counts[0] as f64 / blocks,
        ratio_mode_planar_like: mode_counts[1] as f64 / blocks,
        ratio_mode_directional: mode_counts[2] as f64 / blocks,
        mean_residual_energy: residual_energy / blocks,
        mean_gradient_magnitude: gradient_sum / blocks,
        ratio_flat_blocks: flat_count as f64 / blocks,
    }
}

/// Inter analysis of one frame against its reference.
///
/// Per block: SKIP when the zero-motion SAD is exactly 0; otherwise a full
/// search over ±`search_range` (candidates clamped to the frame) picks the
/// minimum-SAD vector, preferring shorter vectors on ties. A block whose
/// best inter SAD exceeds its intra DC SAD is classified INTRA. MV length
/// statistics cover non-skip blocks (the motion search ran for them);
/// `mean_sad_after_me` averages the post-search SAD over all blocks;
/// `ratio_zero_mv` is the fraction of blocks whose search (or skip)
/// resolved to the zero vector.
pub fn analyze_inter(
    frame: &Plane,
    reference: &Plane,
    block: usize,
    search_range: usize,
) -> Result<InterFrameStats, PrecodeError> {
    assert!(block >= 2, "analysis block must be >= 2 pixels");
    if frame.width() != reference.width() || frame.height() != reference.height() {
        return Err(PrecodeError::DimensionMismatch {
            left: (frame.width(), frame.height()),
            right: (reference.width(), reference.height()),
        });
    }
    assert!(
        frame.width() >= block && frame.height() >= block,
        "frame must fit at least one analysis block"
    );
    let (w, h) = (frame.width(), frame.height());
    let (bx, by) = (w / block, h / block);
    let blocks = (bx * by) as f64;
    let r = search_range as isize;

    let sad_at = |x0: usize, y0: usize, rx: usize, ry: usize| -> u64 {
        let mut sad = 0u64;
        for dy in 0..block {
            for dx in 0..block {
                let a = frame.get(x0 + dx, y0 + dy) as i64;
                let b = reference.get(rx + dx, ry + dy) as i64;
                sad += a.abs_diff(b);
            }
        }
        sad
    };

    let mut coded_bytes = 0.0;
    let mut skip_count = 0usize;
    let mut intra_count = 0usize;
    let mut inter_count = 0usize;
    let mut zero_mv_count = 0usize;
    let mut mv_lengths: Vec<f64> = Vec::new();
    let mut sad_after_me = 0.0;

    for tile_y in 0..by {
        for tile_x in 0..bx {
            let (x0, y0) = (tile_x * block, tile_y * block);
            if sad_at(x0, y0, x0, y0) == 0 {
                skip_count += 1;
                zero_mv_count += 1;
                continue; // SAD 0, zero MV, zero bytes
            }

            let mut best_sad = u64::MAX;
            let mut best_mv = (0i64, 0i64);
            let mut best_len2 = i64::MAX;
            for mdy in -r..=r {
                for mdx in -r..=r {
                    let rx = x0 as isize + mdx;
                    let ry = y0 as isize + mdy;
                    if rx < 0 || ry < 0 || rx + block as isize > w as isize
                        || ry + block as isize > h as isize
                    {
                        continue;
                    }
                    let sad = sad_at(x0, y0, rx as usize, ry as usize);
                    let len2 = (mdx * mdx + mdy * mdy) as i64;
                    if sad < best_sad || (sad == best_sad && len2 < best_len2) {
                        best_sad = sad;
                        best_mv = (mdx as i64, mdy as i64);
                        best_len2 = len2;
                    }
                }
            }

            let mut mean = 0.0;
            for dy in 0..block {
                for dx in 0..block {
                    mean += frame.get(x0 + dx, y0 + dy) as f64;
                }
            }
            mean /= (block * block) as f64;
            let mut dc_sad = 0.0;
            for dy in 0..block {
                for dx in 0..block {
                    dc_sad += (frame.get(x0 + dx, y0 + dy) as f64 - mean).abs();
                }
            }

            sad_after_me += best_sad as f64;
            mv_lengths.push(((best_mv.0 * best_mv.0 + best_mv.1 * best_mv.1) as f64).sqrt());
            if best_mv == (0, 0) {
                zero_mv_count += 1;
            }
            if best_sad as f64 > dc_sad {
                intra_count += 1;
                coded_bytes += (1.0 + dc_sad).log2();
            } else {
                inter_count += 1;
                coded_bytes += (1.0 + best_sad as f64).log2();
            }
        }
    }

    let (mean_mv, std_mv) = if mv_lengths.is_empty() {
        (0.0, 0.0)
    } else {
        crate::texture::mean_std(&mv_lengths)
    };

    Ok(InterFrameStats {
        coded_bytes,
        ratio_intra_blocks: intra_count as f64 / blocks,
        ratio_inter_blocks: inter_count as f64 / blocks,
        ratio_skip_blocks: skip_count as f64 / blocks,
        mean_mv_length: mean_mv,
        std_mv_length: std_mv,
        mean_sad_after_me: sad_after_me / blocks,
        ratio_zero_mv: zero_mv_count as f64 / blocks,
    })
}

/// One stats-log row: a coded entry of the reorganized sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub frame_index: usize,
    pub mode: CodingMode,
    pub values: Vec<f64>,
}

/// Runs the built-in analyzer over a segment, yielding one row per entry
/// of the reorganized sequence, in coding order.
pub fn precode_rows(frames: &[Plane]) -> Result<Vec<StatsRow>, PrecodeError> {
    let entries = reorganize(frames)?;
    entries
        .par_iter()
        .map(|e| {
            let values = match e.mode {
                CodingMode::Intra => analyze_intra(&frames[e.frame], PRECODE_BLOCK)
                    .values()
                    .to_vec(),
                CodingMode::Inter => analyze_inter(
                    &frames[e.frame],
                    &frames[e.frame - 1],
                    PRECODE_BLOCK,
                    PRECODE_SEARCH_RANGE,
                )?
                .values()
                .to_vec(),
            };
            Ok(StatsRow {
                frame_index: e.frame,
                mode: e.mode,
                values,
            })
        })
        .collect()
}

/// Aggregates per-frame stats rows into the pre-coding feature block:
/// for each intra feature then each inter feature, the five statistics of
/// its across-frames series, in schema order.
pub fn aggregate_precoding(
    intra_rows: &[Vec<f64>],
    inter_rows: &[Vec<f64>],
    schema: &FeatureSchema,
) -> Result<Vec<f64>, PrecodeError> {
    for (mode, rows, expected) in [
        (CodingMode::Intra, intra_rows, schema.intra_names().len()),
        (CodingMode::Inter, inter_rows, schema.inter_names().len()),
    ] {
        if rows.is_empty() {
            return Err(PrecodeError::EmptyMode { mode });
        }
        for row in rows {
            if row.len() != expected {
                return Err(PrecodeError::RowWidth {
                    mode,
                    expected,
                    got: row.len(),
                });
            }
        }
    }

    let mut out = Vec::with_capacity(schema.precoding_dim());
    for (rows, count) in [
        (intra_rows, schema.intra_names().len()),
        (inter_rows, schema.inter_names().len()),
    ] {
        for col in 0..count {
            let series: Vec<f64> = rows.iter().map(|r| r[col]).collect();
            out.extend(moments(&series, PRECODE_HIST_BINS).to_array());
        }
    }
    Ok(out)
}

/// The full pre-coding feature block of a segment via the built-in
/// analyzer. The schema must be the default v1 lists — wider schemas come
/// from external pre-coders through the stats-log adapter.
pub fn precoding_vector(
    frames: &[Plane],
    schema: &FeatureSchema,
) -> Result<Vec<f64>, PrecodeError> {
    let default = FeatureSchema::default_v1();
    if schema.intra_names() != default.intra_names()
        || schema.inter_names() != default.inter_names()
    {
        return Err(PrecodeError::SchemaUnsupported {
            version: schema.full_version(),
        });
    }
    let rows = precode_rows(frames)?;
    let (intra, inter) = partition_rows(&rows);
    aggregate_precoding(&intra, &inter, schema)
}

/// Splits rows by mode, preserving coding order.
pub fn partition_rows(rows: &[StatsRow]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for row in rows {
        match row.mode {
            CodingMode::Intra => intra.push(row.values.clone()),
            CodingMode::Inter => inter.push(row.values.clone()),
        }
    }
    (intra, inter)
}

#[derive(Debug)]
pub enum StatsLogError {
    /// Header lacks a column the schema requires.
    MissingColumn { column: String },
    /// Header names a column the schema does not know.
    UnknownColumn { column: String },
    /// Row is structurally broken or a cell fails to parse.
    BadRow {
        line: usize,
        column: String,
        message: String,
    },
    /// Mode cell is neither `I` nor `P`.
    BadMode { line: usize, value: String },
    Io(std::io::Error),
}

impl fmt::Display for StatsLogError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatsLogError::MissingColumn { column } => {
                write!(f, "stats log is missing column `{column}`")
            }
            StatsLogError::UnknownColumn { column } => {
                write!(f, "stats log has unknown column `{column}`")
            }
            StatsLogError::BadRow {
                line,
                column,
                message,
            } => write!(f, "stats log line {line}, column `{column}`: {message}"),
            StatsLogError::BadMode { line, value } => {
                write!(f, "stats log line {line}: mode `{value}` is not I or P")
            }
            StatsLogError::Io(e) => write!(f, "stats log I/O: {e}"),
        }
    }
}

impl std::error::Error for StatsLogError {}

impl From<std::io::Error> for StatsLogError {
    fn from(e: std::io::Error) -> Self {
        StatsLogError::Io(e)
    }
}

/// Writes rows as the documented CSV: header
/// `frame_index,mode,intra_<name>...,inter_<name>...`; intra rows leave the
/// inter cells empty and vice versa. Values print in round-trip-exact form.
pub fn write_stats_log<W: Write>(
    rows: &[StatsRow],
    schema: &FeatureSchema,
    writer: &mut W,
) -> std::io::Result<()> {
    write!(writer, "frame_index,mode")?;
    for name in schema.intra_names() {
        write!(writer, ",intra_{name}")?;
    }
    for name in schema.inter_names() {
        write!(writer, ",inter_{name}")?;
    }
    writeln!(writer)?;

    let (ni, np) = (schema.intra_names().len(), schema.inter_names().len());
    for row in rows {
        write!(writer, "{},{}", row.frame_index, row.mode.letter())?;
        match row.mode {
            CodingMode::Intra => {
                for v in &row.values {
                    write!(writer, ",{v}")?;
                }
                for _ in 0..np {
                    write!(writer, ",")?;
                }
            }
            CodingMode::Inter => {
                for _ in 0..ni {
                    write!(writer, ",")?;
                }
                for v in &row.values {
                    write!(writer, ",{v}")?;
                }
            }
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// Parses a stats-log CSV, partitioning rows by mode in file order.
/// Column order in the file is free; values are mapped through the header.
pub fn parse_stats_log<R: BufRead>(
    reader: R,
    schema: &FeatureSchema,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), StatsLogError> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| StatsLogError::BadRow {
        line: 1,
        column: "-".to_string(),
        message: "empty stats log".to_string(),
    })??;
    let columns: Vec<&str> = header.trim_end().split(',').collect();

    // Map each schema feature to its column index.
    let col_of = |name: &str| columns.iter().position(|c| *c == name);
    let frame_col = col_of("frame_index").ok_or_else(|| StatsLogError::MissingColumn {
        column: "frame_index".to_string(),
    })?;
    let mode_col = col_of("mode").ok_or_else(|| StatsLogError::MissingColumn {
        column: "mode".to_string(),
    })?;
    let mut intra_cols = Vec::new();
    for name in schema.intra_names() {
        let column = format!("intra_{name}");
        intra_cols.push(col_of(&column).ok_or(StatsLogError::MissingColumn { column })?);
    }
    let mut inter_cols = Vec::new();
    for name in schema.inter_names() {
        let column = format!("inter_{name}");
        inter_cols.push(col_of(&column).ok_or(StatsLogError::MissingColumn { column })?);
    }
    for (idx, column) in columns.iter().enumerate() {
        let known = idx == frame_col
            || idx == mode_col
            || intra_cols.contains(&idx)
            || inter_cols.contains(&idx);
        if !known {
            return Err(StatsLogError::UnknownColumn {
                column: column.to_string(),
            });
        }
    }

    let mut intra_rows = Vec::new();
    let mut inter_rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2; // 1-based, after the header
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != columns.len() {
            return Err(StatsLogError::BadRow {
                line: lineno,
                column: "-".to_string(),
                message: format!("{} cells, header has {}", cells.len(), columns.len()),
            });
        }
        let mode = match cells[mode_col] {
            "I" => CodingMode::Intra,
            "P" => CodingMode::Inter,
            other => {
                return Err(StatsLogError::BadMode {
                    line: lineno,
                    value: other.to_string(),
                })
            }
        };
        let cols = match mode {
            CodingMode::Intra => &intra_cols,
            CodingMode::Inter => &inter_cols,
        };
        let mut values = Vec::with_capacity(cols.len());
        for &c in cols {
            let cell = cells[c];
            let v: f64 = cell.parse().map_err(|_| StatsLogError::BadRow {
                line: lineno,
                column: columns[c].to_string(),
                message: format!("non-numeric cell `{cell}`"),
            })?;
            values.push(v);
        }
        match mode {
            CodingMode::Intra => intra_rows.push(values),
            CodingMode::Inter => inter_rows.push(values),
        }
    }
    Ok((intra_rows, inter_rows))
}
