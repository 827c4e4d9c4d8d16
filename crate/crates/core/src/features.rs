//! Feature vectors, the feature schema, and the per-segment feature cache.
//!
//! A segment's base feature vector concatenates the 40 texture values with
//! the pre-coding statistics. The pre-coding half is schema-driven: the
//! built-in analyzer supplies a 10-intra/8-inter default, and an external
//! pre-coder can supply a wider schema through the stats-log adapter. All
//! downstream consumers treat the vector as an opaque ordered list tagged
//! with a schema version, so dimensions are never hard-coded.

use crate::frameio::Plane;
use crate::precode;
use crate::segmenter::Segment;
use crate::texture;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

/// Names and order of every feature a segment vector contains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    version: String,
    intra_names: Vec<String>,
    inter_names: Vec<String>,
    stats: [String; 5],
}

#[derive(Debug)]
pub enum SchemaError {
    /// Version tokens embed into space-separated cache lines.
    VersionHasWhitespace(String),
    DuplicateName { list: &'static str, name: String },
    EmptyList { list: &'static str },
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaError::VersionHasWhitespace(v) => {
                write!(f, "schema version `{v}` must not contain whitespace")
            }
            SchemaError::DuplicateName { list, name } => {
                write!(f, "duplicate {list} feature name `{name}`")
            }
            SchemaError::EmptyList { list } => write!(f, "{list} feature list is empty"),
        }
    }
}

impl std::error::Error for SchemaError {}

impl FeatureSchema {
    /// The built-in analyzer's schema: 10 intra + 8 inter features.
    pub fn default_v1() -> Self {
        FeatureSchema {
            version: "v1".to_string(),
            intra_names: precode::INTRA_FEATURE_NAMES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            inter_names: precode::INTER_FEATURE_NAMES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            stats: texture::STAT_NAMES.map(str::to_string),
        }
    }

    /// Custom schema, e.g. for an external pre-coder's feature lists.
    /// Names must be unique within each list.
    pub fn new(
        version: &str,
        intra_names: Vec<String>,
        inter_names: Vec<String>,
    ) -> Result<Self, SchemaError> {
        if version.contains(char::is_whitespace) {
            return Err(SchemaError::VersionHasWhitespace(version.to_string()));
        }
        for (list, names) in [("intra", &intra_names), ("inter", &inter_names)] {
            if names.is_empty() {
                return Err(SchemaError::EmptyList { list });
            }
            for (i, name) in names.iter().enumerate() {
                if names[..i].contains(name) {
                    return Err(SchemaError::DuplicateName {
                        list,
                        name: name.clone(),
                    });
                }
            }
        }
        Ok(FeatureSchema {
            version: version.to_string(),
            intra_names,
            inter_names,
            stats: texture::STAT_NAMES.map(str::to_string),
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn intra_names(&self) -> &[String] {
        &self.intra_names
    }

    pub fn inter_names(&self) -> &[String] {
        &self.inter_names
    }

    pub fn stat_names(&self) -> &[String; 5] {
        &self.stats
    }

    /// Pre-coding dimension: (intra + inter features) × 5 statistics.
    pub fn precoding_dim(&self) -> usize {
        (self.intra_names.len() + self.inter_names.len()) * self.stats.len()
    }

    /// Full base vector dimension: 40 texture values + pre-coding block.
    pub fn base_dim(&self) -> usize {
        40 + self.precoding_dim()
    }

    /// Identifier stamped on every vector, cache record and model file.
    /// Encodes the schema version and both block dimensions, so any layout
    /// change makes old artifacts visibly incompatible.
    pub fn full_version(&self) -> String {
        format!(
            "{}/tex40/pre{}x{}",
            self.version,
            self.intra_names.len(),
            self.inter_names.len()
        )
    }

    /// Names of all `base_dim()` values, in vector order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = texture::spatial_temporal_names();
        for name in &self.intra_names {
            for stat in &self.stats {
                names.push(format!("intra_{name}_{stat}"));
            }
        }
        for name in &self.inter_names {
            for stat in &self.stats {
                names.push(format!("inter_{name}_{stat}"));
            }
        }
        names
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        FeatureSchema::default_v1()
    }
}

/// Ordered feature values for one segment, tagged with the schema version
/// they were extracted under. All values are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    schema_version: String,
    values: Vec<f64>,
}

#[derive(Debug)]
pub enum FeatureError {
    /// A value at `index` is NaN or infinite.
    NonFinite { index: usize, value: f64 },
    Texture(crate::texture::TextureError),
    Precode(crate::precode::PrecodeError),
}

impl fmt::Display for FeatureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureError::NonFinite { index, value } => {
                write!(f, "feature {index} is not finite ({value})")
            }
            FeatureError::Texture(e) => write!(f, "texture features: {e}"),
            FeatureError::Precode(e) => write!(f, "pre-coding features: {e}"),
        }
    }
}

impl std::error::Error for FeatureError {}

impl From<crate::texture::TextureError> for FeatureError {
    fn from(e: crate::texture::TextureError) -> Self {
        FeatureError::Texture(e)
    }
}

impl From<crate::precode::PrecodeError> for FeatureError {
    fn from(e: crate::precode::PrecodeError) -> Self {
        FeatureError::Precode(e)
    }
}

impl FeatureVector {
    pub fn new(schema_version: &str, values: Vec<f64>) -> Result<Self, FeatureError> {
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(FeatureError::NonFinite { index, value });
            }
        }
        Ok(FeatureVector {
            schema_version: schema_version.to_string(),
            values,
        })
    }

    pub fn schema_version(&self) -> &str {
        &self.schema_version
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Extracts the full base feature vector of one segment:
/// 40 texture values followed by the schema's pre-coding block.
pub fn segment_features(
    frames: &[Plane],
    schema: &FeatureSchema,
) -> Result<FeatureVector, FeatureError> {
    let mut values = texture::spatial_temporal_vector(frames)?;
    values.extend(precode::precoding_vector(frames, schema)?);
    FeatureVector::new(&schema.full_version(), values)
}

/// In-memory feature cache keyed by segment `source_id`, with a textual
/// file representation.
///
/// File format, one record per line:
/// `<source_id as 16 hex digits> <schema_version> <v0> <v1> ...`
/// Lines whose schema version differs from the cache's are stale artifacts
/// of an older pipeline and are dropped on load.
#[derive(Debug)]
pub struct FeatureCache {
    schema_version: String,
    entries: HashMap<u64, FeatureVector>,
    hits: usize,
    misses: usize,
}

#[derive(Debug)]
pub enum CacheError {
    /// Structurally malformed line (not a stale-schema line).
    BadLine { line: usize, message: String },
    Io(std::io::Error),
}

impl fmt::Display for CacheError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheError::BadLine { line, message } => {
                write!(f, "feature cache line {line}: {message}")
            }
            CacheError::Io(e) => write!(f, "feature cache I/O: {e}"),
        }
    }
}

impl std::error::Error for CacheError {}

impl From<std::io::Error> for CacheError {
    fn from(e: std::io::Error) -> Self {
        CacheError::Io(e)
    }
}

impl FeatureCache {
    pub fn new(schema_version: &str) -> Self {
        FeatureCache {
            schema_version: schema_version.to_string(),
            entries: HashMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    /// Parses a cache file. Records under a different schema version are
    /// skipped; structural corruption is an error naming the line.
    pub fn load<R: BufRead>(reader: R, schema_version: &str) -> Result<Self, CacheError> {
        let mut cache = FeatureCache::new(schema_version);
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_ascii_whitespace();
            let id_tok = parts.next().ok_or_else(|| CacheError::BadLine {
                line: lineno,
                message: "missing source id".to_string(),
            })?;
            let id = u64::from_str_radix(id_tok, 16).map_err(|_| CacheError::BadLine {
                line: lineno,
                message: format!("bad source id `{id_tok}`"),
            })?;
            let version = parts.next().ok_or_else(|| CacheError::BadLine {
                line: lineno,
                message: "missing schema version".to_string(),
            })?;
            if version != schema_version {
                continue; // stale record from an older pipeline
            }
            let mut values = Vec::new();
            for tok in parts {
                let v: f64 = tok.parse().map_err(|_| CacheError::BadLine {
                    line: lineno,
                    message: format!("bad value `{tok}`"),
                })?;
                values.push(v);
            }
            let fv = FeatureVector::new(version, values).map_err(|e| CacheError::BadLine {
                line: lineno,
                message: e.to_string(),
            })?;
            cache.entries.insert(id, fv);
        }
        Ok(cache)
    }

    pub fn save<W: Write>(&self, writer: &mut W) -> std::io::Result<()> {
        let mut ids: Vec<&u64> = self.entries.keys().collect();
        ids.sort(); // deterministic files
        for id in ids {
            let fv = &self.entries[id];
            write!(writer, "{id:016x} {}", fv.schema_version())?;
            for v in fv.values() {
                write!(writer, " {v}")?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }

    /// Cached vector for a segment, counting the hit or miss.
    pub fn get(&mut self, source_id: u64) -> Option<FeatureVector> {
        match self.entries.get(&source_id) {
            Some(fv) => {
                self.hits += 1;
                Some(fv.clone())
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    pub fn insert(&mut self, source_id: u64, fv: FeatureVector) {
        debug_assert_eq!(fv.schema_version(), self.schema_version);
        self.entries.insert(source_id, fv);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn misses(&self) -> usize {
        self.misses
    }
}

/// Cache-aware feature extraction for one detected segment.
pub fn segment_features_cached(
    frames: &[Plane],
    segment: &Segment,
    schema: &FeatureSchema,
    cache: &mut FeatureCache,
) -> Result<FeatureVector, FeatureError> {
    if let Some(fv) = cache.get(segment.source_id) {
        return Ok(fv);
    }
    let fv = segment_features(frames, schema)?;
    cache.insert(segment.source_id, fv.clone());
    Ok(fv)
}
