//! Model file format. Self-describing and fixed-endian so artifacts move
//! between machines:
//!
//! ```text
//! magic           8 bytes  "RFPREDMD"
//! format version  u32 LE
//! schema length   u32 LE, then that many UTF-8 bytes (feature schema id)
//! input_dim       u32 LE
//! hidden          u32 LE
//! blocks          u32 LE
//! bn_eps          f64 LE
//! arrays          f64 LE each, in order: bn gamma, beta, running mean,
//!                 running var; attn1 w,b; attn2 w,b; trunk w,b; per block
//!                 fc1 w,b then fc2 w,b; head w,b
//! ```
//!
//! The attention bottleneck width is `max(1, input_dim/4)`, derived, so it
//! is not stored. Round-trips are bit-exact: values pass through
//! `to_le_bytes`/`from_le_bytes` untouched.

use super::{Dense, ModelParams, ResidualBlock};
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RFPREDMD";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Caps on header fields; anything larger is a corrupt or hostile file,
/// refused before allocating.
const MAX_SCHEMA_LEN: u32 = 4096;
const MAX_DIM: u32 = 1 << 20;
const MAX_BLOCKS: u32 = 1024;

#[derive(Debug)]
pub enum ModelIoError {
    BadMagic,
    UnsupportedVersion(u32),
    BadHeader(String),
    /// A stored value violates a model invariant (non-finite, or a
    /// non-positive running variance).
    InvalidValue { field: &'static str },
    Truncated,
    Io(io::Error),
}

impl fmt::Display for ModelIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelIoError::BadMagic => write!(f, "bad magic: not a model file"),
            ModelIoError::UnsupportedVersion(v) => {
                write!(f, "unsupported model format version {v} (this build reads {MODEL_FORMAT_VERSION})")
            }
            ModelIoError::BadHeader(msg) => write!(f, "bad model header: {msg}"),
            ModelIoError::InvalidValue { field } => {
                write!(f, "model field `{field}` holds an invalid value")
            }
            ModelIoError::Truncated => write!(f, "model file truncated"),
            ModelIoError::Io(e) => write!(f, "model i/o: {e}"),
        }
    }
}

impl std::error::Error for ModelIoError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            ModelIoError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for ModelIoError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ModelIoError::Truncated
        } else {
            ModelIoError::Io(e)
        }
    }
}

/// Rejects models that must never be persisted or used: non-finite
/// parameters anywhere, or running variances ≤ 0.
fn validate(m: &ModelParams) -> Result<(), ModelIoError> {
    let finite = |xs: &[f64], field: &'static str| -> Result<(), ModelIoError> {
        if xs.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ModelIoError::InvalidValue { field })
        }
    };
    finite(&m.bn_gamma, "bn_gamma")?;
    finite(&m.bn_beta, "bn_beta")?;
    finite(&m.bn_running_mean, "bn_running_mean")?;
    finite(&m.bn_running_var, "bn_running_var")?;
    if !m.bn_running_var.iter().all(|&v| v > 0.0) {
        return Err(ModelIoError::InvalidValue { field: "bn_running_var" });
    }
    if !m.bn_eps.is_finite() || m.bn_eps <= 0.0 {
        return Err(ModelIoError::InvalidValue { field: "bn_eps" });
    }
    for layer in m.dense_layers() {
        finite(&layer.w, "weights")?;
        finite(&layer.b, "biases")?;
    }
    Ok(())
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s<W: Write>(w: &mut W, xs: &[f64]) -> io::Result<()> {
    for v in xs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, ModelIoError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, ModelIoError> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

/// Serializes a model to any writer in the documented format.
pub fn write_model<W: Write>(m: &ModelParams, w: &mut W) -> Result<(), ModelIoError> {
    validate(m)?;
    w.write_all(MAGIC)?;
    put_u32(w, MODEL_FORMAT_VERSION)?;
    let schema = m.schema_version().as_bytes();
    if schema.len() > MAX_SCHEMA_LEN as usize {
        return Err(ModelIoError::BadHeader(format!(
            "schema id is {} bytes, cap is {MAX_SCHEMA_LEN}",
            schema.len()
        )));
    }
    put_u32(w, schema.len() as u32)?;
    w.write_all(schema)?;
    put_u32(w, m.input_dim() as u32)?;
    put_u32(w, m.hidden() as u32)?;
    put_u32(w, m.block_count() as u32)?;
    w.write_all(&m.bn_eps.to_le_bytes())?;
    put_f64s(w, &m.bn_gamma)?;
    put_f64s(w, &m.bn_beta)?;
    put_f64s(w, &m.bn_running_mean)?;
    put_f64s(w, &m.bn_running_var)?;
    for layer in m.dense_layers() {
        put_f64s(w, &layer.w)?;
        put_f64s(w, &layer.b)?;
    }
    Ok(())
}

/// Deserializes a model from any reader, verifying magic, version, header
/// sanity, and value invariants.
pub fn read_model<R: Read>(r: &mut R) -> Result<ModelParams, ModelIoError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let version = get_u32(r)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(ModelIoError::UnsupportedVersion(version));
    }

    let schema_len = get_u32(r)?;
    if schema_len > MAX_SCHEMA_LEN {
        return Err(ModelIoError::BadHeader(format!(
            "schema id length {schema_len} exceeds cap {MAX_SCHEMA_LEN}"
        )));
    }
    let mut schema_bytes = vec![0u8; schema_len as usize];
    r.read_exact(&mut schema_bytes)?;
    let schema_version = String::from_utf8(schema_bytes)
        .map_err(|_| ModelIoError::BadHeader("schema id is not UTF-8".into()))?;

    let input_dim = get_u32(r)?;
    let hidden = get_u32(r)?;
    let blocks = get_u32(r)?;
    if input_dim == 0 || input_dim > MAX_DIM {
        return Err(ModelIoError::BadHeader(format!("input_dim {input_dim} out of range")));
    }
    if hidden == 0 || hidden > MAX_DIM {
        return Err(ModelIoError::BadHeader(format!("hidden {hidden} out of range")));
    }
    if blocks > MAX_BLOCKS {
        return Err(ModelIoError::BadHeader(format!("block count {blocks} out of range")));
    }
    let d = input_dim as usize;
    let h = hidden as usize;
    let a = (d / 4).max(1);

    let mut eps_buf = [0u8; 8];
    r.read_exact(&mut eps_buf)?;
    let bn_eps = f64::from_le_bytes(eps_buf);

    let bn_gamma = get_f64s(r, d)?;
    let bn_beta = get_f64s(r, d)?;
    let bn_running_mean = get_f64s(r, d)?;
    let bn_running_var = get_f64s(r, d)?;

    let read_dense = |r: &mut R, rows: usize, cols: usize| -> Result<Dense, ModelIoError> {
        Ok(Dense {
            rows,
            cols,
            w: get_f64s(r, rows * cols)?,
            b: get_f64s(r, rows)?,
        })
    };

    let attn1 = read_dense(r, a, d)?;
    let attn2 = read_dense(r, d, a)?;
    let trunk = read_dense(r, h, d)?;
    let mut block_list = Vec::with_capacity(blocks as usize);
    for _ in 0..blocks {
        block_list.push(ResidualBlock {
            fc1: read_dense(r, h, h)?,
            fc2: read_dense(r, h, h)?,
        });
    }
    let head = read_dense(r, 1, h)?;

    let m = ModelParams {
        schema_version,
        bn_gamma,
        bn_beta,
        bn_running_mean,
        bn_running_var,
        bn_eps,
        attn1,
        attn2,
        trunk,
        blocks: block_list,
        head,
    };
    validate(&m)?;
    Ok(m)
}

/// Writes a model file at `path` (buffered).
pub fn save_model(m: &ModelParams, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(m, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a model file from `path`.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams, ModelIoError> {
    let mut r = BufReader::new(File::open(path)?);
    let m = read_model(&mut r)?;
    // Anything after the arrays means the header lied about shapes.
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(m),
        Ok(_) => Err(ModelIoError::BadHeader("trailing bytes after model arrays".into())),
        Err(e) => Err(e.into()),
    }
}
