//! Volumes and their on-disk format.
//!
//! A volume is stored as two files sharing a stem. `<stem>.vhdr` is a UTF-8 header:
//!
//! ```text
//! DVOL
//! version = 1
//! shape = <nz> <ny> <nx>
//! spacing = <sz> <sy> <sx>
//! dtype = float32 | float64
//! modality = condition | target
//! normalization = none | percentile <lo> <hi> | window <lo> <hi> | constant <value>
//! ```
//!
//! `<stem>.vraw` holds `nz * ny * nx` little-endian values in C order (z slowest, x fastest).

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Result};

pub const VOLUME_MAGIC: &str = "DVOL";
pub const VOLUME_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Condition,
    Target,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Condition => "condition",
            Modality::Target => "target",
        })
    }
}

/// How a volume was mapped into `[0, 1]`, kept so the mapping can be inverted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Clipped to intensity percentiles `[low, high]` then min-max scaled.
    Percentile { low: f64, high: f64 },
    /// Clipped to a fixed window `[low, high]` then linearly mapped.
    Window { low: f64, high: f64 },
    /// Zero intensity range; every voxel was set to 0.5.
    Constant { value: f64 },
}

impl Normalization {
    /// Maps a normalized value back to original intensity units.
    pub fn invert(&self, v: f64) -> f64 {
        match *self {
            Normalization::Percentile { low, high } | Normalization::Window { low, high } => {
                low + v * (high - low)
            }
            Normalization::Constant { value } => value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueType {
    Float32,
    Float64,
}

impl ValueType {
    fn width(self) -> usize {
        match self {
            ValueType::Float32 => 4,
            ValueType::Float64 => 8,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ValueType::Float32 => "float32",
            ValueType::Float64 => "float64",
        }
    }
}

/// 3-D scalar field in C order `(z, y, x)` with voxel spacing in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: [usize; 3],
    spacing: [f64; 3],
    values: Vec<f64>,
    modality: Modality,
    normalization: Option<Normalization>,
}

impl Volume {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], values: Vec<f64>, modality: Modality) -> Result<Self> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(DataError::InvalidSpacing(spacing));
        }
        let n: usize = shape.iter().product();
        if n != values.len() || n == 0 {
            return Err(DataError::ShapeMismatch {
                shape,
                values: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(DataError::NonFinite);
        }
        Ok(Self {
            shape,
            spacing,
            values,
            modality,
            normalization: None,
        })
    }

    pub fn with_normalization(mut self, n: Option<Normalization>) -> Self {
        self.normalization = n;
        self
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn normalization(&self) -> Option<Normalization> {
        self.normalization
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> f64 {
        let [_, ny, nx] = self.shape;
        self.values[(z * ny + y) * nx + x]
    }

    /// Axial slice `z` as a row-major `ny * nx` buffer.
    pub fn slice(&self, z: usize) -> &[f64] {
        let [_, ny, nx] = self.shape;
        &self.values[z * ny * nx..(z + 1) * ny * nx]
    }

    /// Rounds every value to the nearest `f32`, so a `float32` write round-trips exactly.
    pub fn round_to_f32(mut self) -> Self {
        self.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        self
    }
}

pub fn header_path(stem: &Path) -> PathBuf {
    stem.with_extension("vhdr")
}

pub fn raw_path(stem: &Path) -> PathBuf {
    stem.with_extension("vraw")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_header(v: &Volume, dtype: ValueType) -> String {
    let [nz, ny, nx] = v.shape;
    let [sz, sy, sx] = v.spacing;
    let norm = match v.normalization {
        None => "none".to_string(),
        Some(Normalization::Percentile { low, high }) => format!("percentile {low} {high}"),
        Some(Normalization::Window { low, high }) => format!("window {low} {high}"),
        Some(Normalization::Constant { value }) => format!("constant {value}"),
    };
    format!(
        "{VOLUME_MAGIC}\nversion = {VOLUME_VERSION}\nshape = {nz} {ny} {nx}\nspacing = {sz} {sy} {sx}\n\
         dtype = {}\nmodality = {}\nnormalization = {norm}\n",
        dtype.name(),
        v.modality
    )
}

/// Writes `<stem>.vhdr` and `<stem>.vraw`. With `float32`, values are rounded.
pub fn write_volume_as(stem: &Path, v: &Volume, dtype: ValueType) -> Result<()> {
    let hdr = header_path(stem);
    fs::write(&hdr, format_header(v, dtype)).map_err(io_err(&hdr))?;
    let mut raw = Vec::with_capacity(v.values.len() * dtype.width());
    for &x in &v.values {
        match dtype {
            ValueType::Float32 => raw.extend_from_slice(&(x as f32).to_le_bytes()),
            ValueType::Float64 => raw.extend_from_slice(&x.to_le_bytes()),
        }
    }
    let rp = raw_path(stem);
    let mut f = fs::File::create(&rp).map_err(io_err(&rp))?;
    f.write_all(&raw).map_err(io_err(&rp))?;
    Ok(())
}

/// Writes with the default `float32` payload.
pub fn write_volume(stem: &Path, v: &Volume) -> Result<()> {
    write_volume_as(stem, v, ValueType::Float32)
}

struct Header {
    shape: [usize; 3],
    spacing: [f64; 3],
    dtype: ValueType,
    modality: Modality,
    normalization: Option<Normalization>,
}

fn parse_header(path: &Path, text: &str) -> Result<Header> {
    let bad = |msg: String| DataError::Header {
        path: path.to_path_buf(),
        msg,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(VOLUME_MAGIC) {
        return Err(DataError::BadMagic(path.to_path_buf()));
    }
    let mut version = None;
    let (mut shape, mut spacing, mut dtype, mut modality, mut norm) = (None, None, None, None, None);
    for line in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
        let nums = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = value
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(format!("{key}: bad number `{t}`"))))
                .collect::<Result<_>>()?;
            if v.len() != n {
                return Err(bad(format!("{key}: expected {n} values, got {}", v.len())));
            }
            Ok(v)
        };
        match key {
            "version" => {
                version = Some(
                    value
                        .parse::<u32>()
                        .map_err(|_| bad(format!("bad version `{value}`")))?,
                )
            }
            "shape" => {
                let v: Vec<usize> = value
                    .split_whitespace()
                    .map(|t| t.parse::<usize>().map_err(|_| bad(format!("shape: bad size `{t}`"))))
                    .collect::<Result<_>>()?;
                let s: [usize; 3] = v
                    .try_into()
                    .map_err(|_| bad("shape: expected 3 sizes".into()))?;
                shape = Some(s);
            }
            "spacing" => {
                let v = nums(3)?;
                spacing = Some([v[0], v[1], v[2]]);
            }
            "dtype" => {
                dtype = Some(match value {
                    "float32" => ValueType::Float32,
                    "float64" => ValueType::Float64,
                    other => return Err(bad(format!("unknown dtype `{other}`"))),
                })
            }
            "modality" => {
                modality = Some(match value {
                    "condition" => Modality::Condition,
                    "target" => Modality::Target,
                    other => return Err(bad(format!("unknown modality `{other}`"))),
                })
            }
            "normalization" => {
                let mut parts = value.split_whitespace();
                let kind = parts.next().unwrap_or("");
                let rest: Vec<f64> = parts
                    .map(|t| t.parse::<f64>().map_err(|_| bad(format!("normalization: bad number `{t}`"))))
                    .collect::<Result<_>>()?;
                norm = Some(match (kind, rest.as_slice()) {
                    ("none", []) => None,
                    ("percentile", [lo, hi]) => Some(Normalization::Percentile { low: *lo, high: *hi }),
                    ("window", [lo, hi]) => Some(Normalization::Window { low: *lo, high: *hi }),
                    ("constant", [c]) => Some(Normalization::Constant { value: *c }),
                    _ => return Err(bad(format!("bad normalization `{value}`"))),
                });
            }
            other => return Err(bad(format!("unknown key `{other}`"))),
        }
    }
    match version {
        Some(VOLUME_VERSION) => {}
        Some(found) => {
            return Err(DataError::UnsupportedVersion {
                path: path.to_path_buf(),
                found,
            })
        }
        None => return Err(bad("missing version".into())),
    }
    let spacing = spacing.ok_or_else(|| bad("missing spacing".into()))?;
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(DataError::InvalidSpacing(spacing));
    }
    Ok(Header {
        shape: shape.ok_or_else(|| bad("missing shape".into()))?,
        spacing,
        dtype: dtype.ok_or_else(|| bad("missing dtype".into()))?,
        modality: modality.ok_or_else(|| bad("missing modality".into()))?,
        normalization: norm.unwrap_or(None),
    })
}

/// Reads a volume from `<stem>.vhdr` / `<stem>.vraw`. `stem` may carry either extension.
pub fn read_volume(stem: &Path) -> Result<Volume> {
    let hdr = header_path(stem);
    let text = fs::read_to_string(&hdr).map_err(io_err(&hdr))?;
    let h = parse_header(&hdr, &text)?;
    let rp = raw_path(stem);
    let raw = fs::read(&rp).map_err(io_err(&rp))?;
    let n: usize = h.shape.iter().product();
    let expected = n * h.dtype.width();
    if raw.len() != expected {
        return Err(DataError::ByteCount {
            path: rp,
            expected,
            actual: raw.len(),
        });
    }
    let values: Vec<f64> = match h.dtype {
        ValueType::Float32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        ValueType::Float64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    Ok(Volume::new(h.shape, h.spacing, values, h.modality)?.with_normalization(h.normalization))
}

/// Writes an 8-bit binary PGM. Values are mapped linearly so `low -> 0` and `high -> 255`,
/// clamped outside that range, and rounded to the nearest level.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64], low: f64, high: f64) -> Result<()> {
    if values.len() != width * height {
        return Err(DataError::ShapeMismatch {
            shape: [1, height, width],
            values: values.len(),
        });
    }
    let span = if high > low { high - low } else { 1.0 };
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        values
            .iter()
            .map(|v| (((v - low) / span).clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out).map_err(io_err(path))
}
