//! File formats: the `KDT1` tensor container, binary PGM/PPM images, CSV
//! tables and factorization bundles.
//!
//! # `KDT1`
//!
//! ```text
//! offset  size        content
//! 0       4           ASCII "KDT1"
//! 4       4           m, u32 little-endian
//! 8       4           n, u32 little-endian
//! 12      4           N, u32 little-endian
//! 16      8·m·n·N     f64 little-endian values, slice by slice, column-major
//! ```
//!
//! Matrices are stored as `m × n × 1` tensors.
//!
//! # Images
//!
//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255. Pixels are read as
//! `byte / 255` and written as `round(255 · clamp(v, 0, 1))`, so a read
//! followed by a write reproduces the pixel bytes. A PPM becomes a 3-slice
//! tensor, one color channel per slice. Headers are written canonically as
//! `P5\n<width> <height>\n255\n`.
//!
//! # CSV
//!
//! Floats are written in shortest round-trip form, so parsing a cell with
//! `str::parse::<f64>` gives back the exact value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::solver::{KdrsdlFactorization, SolverConfig, TraceRow};
use crate::synth::RNG_ALGORITHM;
use crate::tensor::{Matrix, Tensor3};

pub const TENSOR_MAGIC: &[u8; 4] = b"KDT1";
const HEADER_LEN: usize = 16;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serializes a tensor in the `KDT1` layout.
pub fn encode_tensor(t: &Tensor3) -> Result<Vec<u8>> {
    if !t.is_finite() {
        return Err(Error::NonFinite("tensor to write"));
    }
    let (m, n, d) = t.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.as_slice().len());
    out.extend_from_slice(TENSOR_MAGIC);
    for dim in [m, n, d] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::InvalidArgument(format!("dimension {dim} does not fit in u32")))?;
        out.extend_from_slice(&dim.to_le_bytes());
    }
    for v in t.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses `KDT1` bytes; `path` is only used in error messages.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor3> {
    if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "KDT1".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.into(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (m, n, d) = (dim(4), dim(8), dim(12));
    if m == 0 || n == 0 || d == 0 {
        return Err(Error::Malformed {
            path: path.into(),
            reason: format!("zero dimension in header {m}x{n}x{d}"),
        });
    }
    let expected = m
        .checked_mul(n)
        .and_then(|v| v.checked_mul(d))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Malformed {
            path: path.into(),
            reason: format!("header {m}x{n}x{d} overflows"),
        })?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Malformed {
            path: path.into(),
            reason: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tensor file payload"));
    }
    Tensor3::from_vec(m, n, d, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor3) -> Result<()> {
    write_file(path.as_ref(), &encode_tensor(t)?)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    decode_tensor(&read_file(path)?, path)
}

pub fn write_matrix(path: impl AsRef<Path>, x: &Matrix) -> Result<()> {
    write_tensor(path, &Tensor3::from_slices(std::slice::from_ref(x))?)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let t = read_tensor(path)?;
    if t.depth() != 1 {
        return Err(Error::Malformed {
            path: path.into(),
            reason: format!("expected a matrix (depth 1), found depth {}", t.depth()),
        });
    }
    t.frontal_slice(0)
}

// ---------------------------------------------------------------- images

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageKind {
    /// `P5`, one slice.
    Gray,
    /// `P6`, three slices (red, green, blue).
    Color,
}

impl ImageKind {
    pub fn channels(self) -> usize {
        match self {
            ImageKind::Gray => 1,
            ImageKind::Color => 3,
        }
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl HeaderReader<'_> {
    fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.into(),
            reason: reason.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.malformed(format!("missing or invalid {what}")))
    }
}

/// Decodes a binary PGM or PPM into a 1- or 3-slice tensor with values in `[0, 1]`.
pub fn decode_netpbm(bytes: &[u8], path: &Path) -> Result<(ImageKind, Tensor3)> {
    let kind = match bytes.get(..2) {
        Some(b"P5") => ImageKind::Gray,
        Some(b"P6") => ImageKind::Color,
        other => {
            return Err(Error::BadMagic {
                path: path.into(),
                expected: "P5 or P6".into(),
                found: String::from_utf8_lossy(other.unwrap_or(bytes)).into_owned(),
            })
        }
    };
    let mut header = HeaderReader { bytes, pos: 2, path };
    let width = header.number("width")? as usize;
    let height = header.number("height")? as usize;
    let maxval = header.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(header.malformed(format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    match bytes.get(header.pos) {
        Some(c) if c.is_ascii_whitespace() => header.pos += 1,
        _ => return Err(header.malformed("no whitespace after maxval")),
    }
    let channels = kind.channels();
    let pixels = &bytes[header.pos..];
    let expected = width * height * channels;
    if pixels.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected: header.pos + expected,
            found: bytes.len(),
        });
    }
    // raster order is row-major with interleaved channels
    let t = Tensor3::from_fn(height, width, channels, |i, j, c| {
        pixels[(i * width + j) * channels + c] as f64 / 255.0
    });
    Ok((kind, t))
}

pub fn read_netpbm(path: impl AsRef<Path>) -> Result<(ImageKind, Tensor3)> {
    let path = path.as_ref();
    decode_netpbm(&read_file(path)?, path)
}

/// Reads a grayscale PGM as a matrix.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    match read_netpbm(path)? {
        (ImageKind::Gray, t) => t.frontal_slice(0),
        (ImageKind::Color, _) => Err(Error::BadMagic {
            path: path.into(),
            expected: "P5".into(),
            found: "P6".into(),
        }),
    }
}

/// Stacks images of one kind and size: a PGM contributes one slice, a PPM
/// three consecutive slices.
pub fn read_image_stack<P: AsRef<Path>>(paths: &[P]) -> Result<(ImageKind, Tensor3)> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument("no images given".into()));
    }
    let mut kind = None;
    let mut slices = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let (k, t) = read_netpbm(path)?;
        match kind {
            None => kind = Some(k),
            Some(first) if first != k => {
                return Err(Error::DimensionMismatch(format!(
                    "{} mixes grayscale and color images",
                    path.display()
                )))
            }
            Some(_) => {}
        }
        if let Some(first) = slices.first() {
            let first: &Matrix = first;
            if first.shape() != (t.rows(), t.cols()) {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {}x{}, expected {}x{}",
                    path.display(),
                    t.cols(),
                    t.rows(),
                    first.ncols(),
                    first.nrows()
                )));
            }
        }
        slices.extend(t.to_slices());
    }
    Ok((kind.unwrap(), Tensor3::from_slices(&slices)?))
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_netpbm(kind: ImageKind, channels: &[nalgebra::DMatrixView<'_, f64>]) -> Vec<u8> {
    let (height, width) = channels[0].shape();
    let magic = match kind {
        ImageKind::Gray => "P5",
        ImageKind::Color => "P6",
    };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.reserve(width * height * channels.len());
    for i in 0..height {
        for j in 0..width {
            for c in channels {
                out.push(quantize(c[(i, j)]));
            }
        }
    }
    out
}

pub fn encode_pgm(x: &Matrix) -> Vec<u8> {
    encode_netpbm(ImageKind::Gray, &[x.as_view()])
}

/// Encodes a 3-slice tensor as PPM.
pub fn encode_ppm(t: &Tensor3) -> Result<Vec<u8>> {
    if t.depth() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "a color image needs 3 slices, got {}",
            t.depth()
        )));
    }
    Ok(encode_netpbm(ImageKind::Color, &t.slices().collect::<Vec<_>>()))
}

/// Writes a matrix with values in `[0, 1]` as a PGM.
pub fn write_image(path: impl AsRef<Path>, x: &Matrix) -> Result<()> {
    write_file(path.as_ref(), &encode_pgm(x))
}

pub fn write_ppm(path: impl AsRef<Path>, t: &Tensor3) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(t)?)
}

// ---------------------------------------------------------------- CSV

/// Shortest decimal that parses back to exactly `v`. Very large or small
/// magnitudes use exponent notation.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// `metric,value` rows in insertion order.
pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut out = String::from("metric,value\n");
    for (name, value) in &report.values {
        let _ = writeln!(out, "{name},{}", format_f64(*value));
    }
    out
}

pub fn write_metrics(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    write_file(path.as_ref(), metrics_csv(report).as_bytes())
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::Malformed {
        path: path.into(),
        reason: "not UTF-8".into(),
    })?;
    let mut lines = text.lines();
    if lines.next() != Some("metric,value") {
        return Err(Error::Malformed {
            path: path.into(),
            reason: "expected header metric,value".into(),
        });
    }
    let mut report = MetricsReport::new();
    for line in lines {
        let parsed = line
            .split_once(',')
            .and_then(|(k, v)| Some((k, v.parse::<f64>().ok()?)));
        let Some((name, value)) = parsed else {
            return Err(Error::Malformed {
                path: path.into(),
                reason: format!("bad row {line:?}"),
            });
        };
        report.push(name, value);
    }
    Ok(report)
}

pub const TRACE_HEADER: &str = "iter,err_rec,err_split,mu,mu_K";

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for row in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.iter,
            format_f64(row.err_rec),
            format_f64(row.err_split),
            format_f64(row.mu),
            format_f64(row.mu_k)
        );
    }
    out
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::Malformed {
            path: path.into(),
            reason: format!("expected header {TRACE_HEADER}"),
        });
    }
    lines
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            let row = (cells.len() == 5)
                .then_some(())
                .and_then(|_| {
                    Some(TraceRow {
                        iter: cells[0].parse().ok()?,
                        err_rec: cells[1].parse().ok()?,
                        err_split: cells[2].parse().ok()?,
                        mu: cells[3].parse().ok()?,
                        mu_k: cells[4].parse().ok()?,
                    })
                });
            row.ok_or_else(|| Error::Malformed {
                path: path.into(),
                reason: format!("bad trace row {line:?}"),
            })
        })
        .collect()
}

// ---------------------------------------------------------------- bundles

/// Everything needed to replay a run: the command, every effective
/// parameter and the seed. Serialized as pretty JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    /// Remaining command-specific parameters.
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

impl Manifest {
    pub fn new(command: impl Into<String>) -> Self {
        Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            rng: None,
            solver: None,
            params: BTreeMap::new(),
            converged: None,
            iterations: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self.rng = Some(RNG_ALGORITHM.into());
        self
    }

    pub fn with_solver(mut self, cfg: &SolverConfig) -> Self {
        self.solver = Some(cfg.clone());
        self
    }

    pub fn param(mut self, key: &str, value: impl Serialize) -> Self {
        let value = serde_json::to_value(value).expect("parameters serialize to JSON");
        self.params.insert(key.into(), value);
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        serde_json::from_slice(&read_file(path)?).map_err(|e| Error::Malformed {
            path: path.into(),
            reason: e.to_string(),
        })
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";

/// A factorization saved as a directory: `A.kdt`, `B.kdt`, `R.kdt`, `E.kdt`,
/// `trace.csv` and `manifest.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationBundle {
    pub factorization: KdrsdlFactorization,
    pub manifest: Manifest,
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the bundle files into `dir`, creating it if needed. The manifest's
/// `converged` and `iterations` fields are filled from the factorization.
pub fn write_bundle(
    dir: impl AsRef<Path>,
    fac: &KdrsdlFactorization,
    manifest: &Manifest,
) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    write_matrix(dir.join("A.kdt"), &fac.a)?;
    write_matrix(dir.join("B.kdt"), &fac.b)?;
    write_tensor(dir.join("R.kdt"), &fac.core)?;
    write_tensor(dir.join("E.kdt"), &fac.outliers)?;
    write_file(&dir.join(TRACE_FILE), trace_csv(&fac.trace).as_bytes())?;
    let mut manifest = manifest.clone();
    manifest.converged = Some(fac.converged);
    manifest.iterations = Some(fac.iterations);
    manifest.write(dir.join(MANIFEST_FILE))
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<FactorizationBundle> {
    let dir = dir.as_ref();
    let manifest = Manifest::read(dir.join(MANIFEST_FILE))?;
    let trace = read_trace(dir.join(TRACE_FILE))?;
    let factorization = KdrsdlFactorization {
        a: read_matrix(dir.join("A.kdt"))?,
        b: read_matrix(dir.join("B.kdt"))?,
        core: read_tensor(dir.join("R.kdt"))?,
        outliers: read_tensor(dir.join("E.kdt"))?,
        converged: manifest.converged.unwrap_or(false),
        iterations: manifest.iterations.unwrap_or(trace.len()),
        trace,
    };
    Ok(FactorizationBundle {
        factorization,
        manifest,
    })
}

/// Paths matching a glob pattern, sorted.
pub fn glob_paths(pattern: &str) -> Result<Vec<PathBuf>> {
    let entries = glob::glob(pattern)
        .map_err(|e| Error::InvalidArgument(format!("bad glob {pattern:?}: {e}")))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(e.path().to_path_buf(), e.into()))?;
        paths.push(path);
    }
    paths.sort();
    Ok(paths)
}
