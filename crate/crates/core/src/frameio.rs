//! Raw frame input: YUV4MPEG2 parsing and the luma plane type.
//!
//! All feature math downstream operates on 8-bit luma rasters. Y4M is the
//! only raw input format; decoding compressed sources is delegated to an
//! external command in the CLI layer. The reader keeps the luma plane of
//! every frame and skips chroma bytes without storing them.

use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};

/// 8-bit luma raster of one frame, stored row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Plane {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl Plane {
    /// Builds a plane from row-major samples.
    ///
    /// Panics if `width` or `height` is zero or if the sample count does not
    /// equal `width * height`; those are programming errors, not input
    /// errors (parsers validate dimensions before constructing planes).
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Self {
        assert!(width > 0 && height > 0, "plane dimensions must be nonzero");
        assert_eq!(
            samples.len(),
            width * height,
            "plane samples must be exactly width * height"
        );
        Plane {
            width,
            height,
            samples,
        }
    }

    /// Plane of the given size with every sample set to `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Plane::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major sample data, length `width * height`.
    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    /// Sample at column `x`, row `y`.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.samples[y * self.width + x]
    }

    /// One row of samples.
    #[inline]
    pub fn row(&self, y: usize) -> &[u8] {
        &self.samples[y * self.width..(y + 1) * self.width]
    }
}

impl fmt::Debug for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Avoid dumping whole rasters into assert output.
        write!(f, "Plane({}x{})", self.width, self.height)
    }
}

/// Ordered list of equally sized frames plus their frame rate.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<Plane>,
    frame_rate: f64,
}

impl FrameSequence {
    /// Panics if `frames` is empty, dimensions are inconsistent across
    /// frames, or the frame rate is not positive.
    pub fn new(frames: Vec<Plane>, frame_rate: f64) -> Self {
        assert!(!frames.is_empty(), "frame sequence must have >= 1 frame");
        assert!(frame_rate > 0.0, "frame rate must be positive");
        let (w, h) = (frames[0].width(), frames[0].height());
        assert!(
            frames.iter().all(|p| p.width() == w && p.height() == h),
            "all frames must share identical dimensions"
        );
        FrameSequence { frames, frame_rate }
    }

    pub fn frames(&self) -> &[Plane] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false by construction; present for iterator-ish call sites.
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }
}

/// Chroma layouts the reader understands. Chroma is skipped either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Chroma {
    /// 4:2:0 — two quarter-size chroma planes follow each luma plane.
    C420,
    /// 4:0:0 — luma only.
    Mono,
}

/// Errors from Y4M parsing or writing.
#[derive(Debug)]
pub enum Y4mError {
    /// Stream does not start with the `YUV4MPEG2` signature.
    MissingSignature,
    /// A header token is malformed (named verbatim).
    BadToken(String),
    /// Header ended without a `W` or `H` token.
    MissingDimension(&'static str),
    /// Colorspace token names a layout other than 4:2:0 or 4:0:0.
    UnsupportedColorspace(String),
    /// Expected a `FRAME` marker line before the payload of `frame`.
    BadFrameMarker { frame: usize },
    /// Frame payload ended early.
    TruncatedFrame {
        frame: usize,
        expected: usize,
        got: usize,
    },
    /// Header parsed fine but the stream contains no frames.
    NoFrames,
    Io(io::Error),
}

impl fmt::Display for Y4mError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Y4mError::MissingSignature => write!(f, "missing YUV4MPEG2 signature"),
            Y4mError::BadToken(tok) => write!(f, "malformed Y4M header token `{tok}`"),
            Y4mError::MissingDimension(which) => {
                write!(f, "Y4M header lacks required `{which}` token")
            }
            Y4mError::UnsupportedColorspace(tok) => {
                write!(f, "unsupported Y4M colorspace `{tok}` (expected 4:2:0 or mono)")
            }
            Y4mError::BadFrameMarker { frame } => {
                write!(f, "frame {frame}: expected FRAME marker")
            }
            Y4mError::TruncatedFrame {
                frame,
                expected,
                got,
            } => write!(
                f,
                "frame {frame}: truncated payload ({got} of {expected} bytes)"
            ),
            Y4mError::NoFrames => write!(f, "Y4M stream contains no frames"),
            Y4mError::Io(e) => write!(f, "Y4M I/O error: {e}"),
        }
    }
}

impl std::error::Error for Y4mError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Y4mError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Y4mError {
    fn from(e: io::Error) -> Self {
        Y4mError::Io(e)
    }
}

/// Reads a YUV4MPEG2 stream, retaining only luma.
///
/// Recognized header tokens: `W` (width), `H` (height), `F` (frame rate as
/// `num:den`), `C` (colorspace; 4:2:0 variants and `mono` accepted).
/// `I`, `A` and `X` tokens are skipped. Chroma bytes of 4:2:0 frames are
/// consumed but never stored: every returned plane holds exactly
/// `width * height` samples.
pub fn read_y4m<R: Read>(reader: R) -> Result<FrameSequence, Y4mError> {
    let mut r = BufReader::new(reader);

    let header = read_line(&mut r)?.ok_or(Y4mError::MissingSignature)?;
    let header = String::from_utf8(header).map_err(|_| Y4mError::MissingSignature)?;
    let mut tokens = header.split_ascii_whitespace();
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(Y4mError::MissingSignature);
    }

    let mut width = None;
    let mut height = None;
    let mut rate = 25.0;
    let mut chroma = Chroma::C420; // Y4M convention: 4:2:0 when unspecified.
    for tok in tokens {
        let (tag, rest) = tok.split_at(1);
        match tag {
            "W" => width = Some(parse_dimension(tok, rest)?),
            "H" => height = Some(parse_dimension(tok, rest)?),
            "F" => rate = parse_rate(tok, rest)?,
            "C" => chroma = parse_chroma(tok, rest)?,
            // Interlacing, aspect ratio and comments have no effect on luma.
            "I" | "A" | "X" => {}
            _ => return Err(Y4mError::BadToken(tok.to_string())),
        }
    }
    let width = width.ok_or(Y4mError::MissingDimension("W"))?;
    let height = height.ok_or(Y4mError::MissingDimension("H"))?;

    let luma_len = width * height;
    let chroma_len = match chroma {
        Chroma::C420 => 2 * width.div_ceil(2) * height.div_ceil(2),
        Chroma::Mono => 0,
    };

    let mut frames: Vec<Plane> = Vec::new();
    loop {
        let marker = match read_line(&mut r)? {
            Some(line) => line,
            None => break,
        };
        // `FRAME` may carry optional parameters after a space; both are fine.
        if !(marker == b"FRAME" || marker.starts_with(b"FRAME ")) {
            return Err(Y4mError::BadFrameMarker {
                frame: frames.len(),
            });
        }
        let mut luma = vec![0u8; luma_len];
        fill_exact(&mut r, &mut luma, frames.len(), luma_len + chroma_len, 0)?;
        skip_exact(
            &mut r,
            chroma_len,
            frames.len(),
            luma_len + chroma_len,
            luma_len,
        )?;
        frames.push(Plane::new(width, height, luma));
    }

    if frames.is_empty() {
        return Err(Y4mError::NoFrames);
    }
    Ok(FrameSequence::new(frames, rate))
}

/// Writes a sequence as mono (luma-only) Y4M. Debug/export helper; a stream
/// written here and re-read yields bit-identical luma samples.
pub fn write_y4m<W: Write>(seq: &FrameSequence, writer: &mut W) -> Result<(), Y4mError> {
    let (num, den) = rate_to_ratio(seq.frame_rate());
    writeln!(
        writer,
        "YUV4MPEG2 W{} H{} F{}:{} Ip A1:1 Cmono",
        seq.width(),
        seq.height(),
        num,
        den
    )?;
    for frame in seq.frames() {
        writer.write_all(b"FRAME\n")?;
        writer.write_all(frame.samples())?;
    }
    writer.flush()?;
    Ok(())
}

/// Mean of |a − b| over all co-located samples, in [0, 255].
pub fn mean_abs_diff(a: &Plane, b: &Plane) -> Result<f64, DimensionMismatch> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(DimensionMismatch {
            left: (a.width(), a.height()),
            right: (b.width(), b.height()),
        });
    }
    let total: u64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| (i32::from(x) - i32::from(y)).unsigned_abs() as u64)
        .sum();
    Ok(total as f64 / a.samples().len() as f64)
}

/// Two planes were combined that do not share dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionMismatch {
    pub left: (usize, usize),
    pub right: (usize, usize),
}

impl fmt::Display for DimensionMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "plane dimension mismatch: {}x{} vs {}x{}",
            self.left.0, self.left.1, self.right.0, self.right.1
        )
    }
}

impl std::error::Error for DimensionMismatch {}

/// Reads up to `\n` (stripped). `None` at clean EOF.
fn read_line<R: BufRead>(r: &mut R) -> Result<Option<Vec<u8>>, io::Error> {
    let mut line = Vec::new();
    let n = r.read_until(b'\n', &mut line)?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() == Some(&b'\n') {
        line.pop();
    }
    Ok(Some(line))
}

/// Fills `buf` completely or reports how far into the frame payload we got.
fn fill_exact<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    frame: usize,
    payload_len: usize,
    already: usize,
) -> Result<(), Y4mError> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(Y4mError::TruncatedFrame {
                frame,
                expected: payload_len,
                got: already + filled,
            });
        }
        filled += n;
    }
    Ok(())
}

/// Discards exactly `len` bytes (the chroma planes) without storing them.
fn skip_exact<R: Read>(
    r: &mut R,
    len: usize,
    frame: usize,
    payload_len: usize,
    already: usize,
) -> Result<(), Y4mError> {
    let copied = io::copy(&mut r.take(len as u64), &mut io::sink())?;
    if (copied as usize) < len {
        return Err(Y4mError::TruncatedFrame {
            frame,
            expected: payload_len,
            got: already + copied as usize,
        });
    }
    Ok(())
}

fn parse_dimension(tok: &str, rest: &str) -> Result<usize, Y4mError> {
    match rest.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Y4mError::BadToken(tok.to_string())),
    }
}

fn parse_rate(tok: &str, rest: &str) -> Result<f64, Y4mError> {
    let (num, den) = rest.split_once(':').ok_or_else(|| Y4mError::BadToken(tok.to_string()))?;
    let num: u64 = num.parse().map_err(|_| Y4mError::BadToken(tok.to_string()))?;
    let den: u64 = den.parse().map_err(|_| Y4mError::BadToken(tok.to_string()))?;
    if num == 0 || den == 0 {
        return Err(Y4mError::BadToken(tok.to_string()));
    }
    Ok(num as f64 / den as f64)
}

fn parse_chroma(tok: &str, rest: &str) -> Result<Chroma, Y4mError> {
    match rest {
        "420" | "420jpeg" | "420mpeg2" | "420paldv" => Ok(Chroma::C420),
        "mono" => Ok(Chroma::Mono),
        _ => Err(Y4mError::UnsupportedColorspace(tok.to_string())),
    }
}

/// Best rational representation of a frame rate for the Y4M `F` token.
fn rate_to_ratio(rate: f64) -> (u64, u64) {
    // NTSC-family rates are x/1001; everything else we emit over 1000.
    let scaled = rate * 1001.0;
    let (num, den) = if (scaled - scaled.round()).abs() < 1e-6 {
        (scaled.round() as u64, 1001)
    } else {
        ((rate * 1000.0).round() as u64, 1000)
    };
    let g = gcd(num.max(1), den);
    (num.max(1) / g, den / g)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}
