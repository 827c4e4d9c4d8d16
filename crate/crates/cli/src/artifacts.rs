//! On-disk artifacts owned by the CLI: the segment manifest written by
//! `segment` and the per-segment results table written by `run`. Both are
//! tab-separated text with `#` comment lines, so they survive version
//! control, diffing, and spreadsheet imports.

use anyhow::{bail, Context, Result};
use cqpass_core::controller::{SegmentOutcome, SegmentResult};
use std::io::{BufRead, Write};
use std::path::PathBuf;

/// One row of `segments.tsv`: where a detected shot lives on disk and which
/// frames of the source it covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    /// Content hash of the covered luma; the feature-cache and label key.
    pub source_id: u64,
    pub start_frame: usize,
    pub end_frame: usize,
    pub path: PathBuf,
}

pub fn write_manifest<W: Write>(entries: &[ManifestEntry], w: &mut W) -> Result<()> {
    writeln!(w, "# cqpass segment manifest")?;
    writeln!(w, "# index\tsource_id\tstart_frame\tend_frame\tpath")?;
    for e in entries {
        writeln!(
            w,
            "{}\t{:016x}\t{}\t{}\t{}",
            e.index,
            e.source_id,
            e.start_frame,
            e.end_frame,
            e.path.display()
        )?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let text = line.trim_end();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 5 {
            bail!("manifest line {}: expected 5 tab-separated fields, got {}", lineno + 1, fields.len());
        }
        let entry = (|| -> Result<ManifestEntry> {
            Ok(ManifestEntry {
                index: fields[0].parse()?,
                source_id: u64::from_str_radix(fields[1], 16)?,
                start_frame: fields[2].parse()?,
                end_frame: fields[3].parse()?,
                path: PathBuf::from(fields[4]),
            })
        })()
        .with_context(|| format!("manifest line {}", lineno + 1))?;
        entries.push(entry);
    }
    Ok(entries)
}

/// One row of the `run` results table. Pass-2 columns are `-` for segments
/// accepted on the first pass; the final-quality column is `-` when the
/// accepted second pass was not measured (production mode).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub job_id: u64,
    pub label: String,
    pub passes: usize,
    pub rf1: f64,
    pub quality1: f64,
    pub rf2: Option<f64>,
    pub quality2: Option<f64>,
    pub accepted_stream: String,
}

impl ResultRow {
    pub fn from_result(r: &SegmentResult) -> Self {
        let first = r.first_pass();
        let second = r.passes.get(1);
        ResultRow {
            job_id: r.job_id,
            label: r.label.clone(),
            passes: r.total_passes(),
            rf1: first.rf,
            quality1: first.measured_quality.unwrap_or(f64::NAN),
            rf2: second.map(|p| p.rf),
            quality2: second.and_then(|p| p.measured_quality),
            accepted_stream: r.accepted_stream.clone(),
        }
    }

    /// Quality of the accepted pass, when it was measured.
    pub fn final_quality(&self) -> Option<f64> {
        if self.passes == 1 {
            Some(self.quality1)
        } else {
            self.quality2
        }
    }

    /// The accuracy-report view of this row, if the accepted pass was
    /// measured.
    pub fn outcome(&self) -> Option<SegmentOutcome> {
        Some(SegmentOutcome {
            first_quality: self.quality1,
            final_quality: self.final_quality()?,
            passes: self.passes,
        })
    }
}

fn opt_cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "-".to_string(),
    }
}

fn parse_cell(field: &str) -> Result<Option<f64>> {
    if field == "-" {
        Ok(None)
    } else {
        Ok(Some(field.parse()?))
    }
}

pub fn write_results<W: Write>(rows: &[ResultRow], w: &mut W) -> Result<()> {
    writeln!(w, "# cqpass run results")?;
    writeln!(w, "# job_id\tlabel\tpasses\trf1\tquality1\trf2\tquality2\taccepted_stream")?;
    for r in rows {
        writeln!(
            w,
            "{:016x}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}\t{}",
            r.job_id,
            r.label,
            r.passes,
            r.rf1,
            r.quality1,
            opt_cell(r.rf2),
            opt_cell(r.quality2),
            r.accepted_stream
        )?;
    }
    Ok(())
}

pub fn read_results<R: BufRead>(r: R) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let text = line.trim_end();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 8 {
            bail!("results line {}: expected 8 tab-separated fields, got {}", lineno + 1, fields.len());
        }
        let row = (|| -> Result<ResultRow> {
            Ok(ResultRow {
                job_id: u64::from_str_radix(fields[0], 16)?,
                label: fields[1].to_string(),
                passes: fields[2].parse()?,
                rf1: fields[3].parse()?,
                quality1: fields[4].parse()?,
                rf2: parse_cell(fields[5])?,
                quality2: parse_cell(fields[6])?,
                accepted_stream: fields[7].to_string(),
            })
        })()
        .with_context(|| format!("results line {}", lineno + 1))?;
        rows.push(row);
    }
    Ok(rows)
}
