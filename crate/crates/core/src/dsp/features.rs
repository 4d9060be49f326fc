use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

pub const MFCC_FULL_DIM: usize = 57;
pub const GAMMATONE_CHANNELS: usize = 64;

const FEATURE_MAGIC: &[u8; 4] = b"FEAT";
const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    MfccStatic,
    /// Static + delta + double-delta MFCCs (57 dims).
    MfccFull,
    Anbn,
    Gfe,
    Stacked,
    /// Concatenation of heterogeneous extractor outputs (and their deltas).
    Combined,
    Irm,
}

impl FeatureKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            FeatureKind::MfccStatic => 1,
            FeatureKind::MfccFull => 2,
            FeatureKind::Anbn => 3,
            FeatureKind::Gfe => 4,
            FeatureKind::Stacked => 5,
            FeatureKind::Combined => 6,
            FeatureKind::Irm => 7,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            1 => FeatureKind::MfccStatic,
            2 => FeatureKind::MfccFull,
            3 => FeatureKind::Anbn,
            4 => FeatureKind::Gfe,
            5 => FeatureKind::Stacked,
            6 => FeatureKind::Combined,
            7 => FeatureKind::Irm,
            other => return Err(Error::Format(format!("unknown feature kind tag {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::MfccStatic => "mfcc_static",
            FeatureKind::MfccFull => "mfcc_full",
            FeatureKind::Anbn => "anbn",
            FeatureKind::Gfe => "gfe",
            FeatureKind::Stacked => "stacked",
            FeatureKind::Combined => "combined",
            FeatureKind::Irm => "irm",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        (1..=7)
            .map(|t| FeatureKind::from_tag(t).unwrap())
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param(format!("unknown feature kind '{s}'")))
    }
}

/// Frames × dims feature matrix tagged with its kind.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    kind: FeatureKind,
    frame_shift_s: f64,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, kind: FeatureKind, frame_shift_s: f64) -> Result<Self> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let dims = data.ncols().max(1);
            return Err(Error::Numerical(format!(
                "non-finite {kind} feature at frame {}, dim {}",
                pos / dims,
                pos % dims
            )));
        }
        let dim = data.ncols();
        let expected = match kind {
            FeatureKind::MfccFull => Some(MFCC_FULL_DIM),
            FeatureKind::Gfe | FeatureKind::Irm => Some(GAMMATONE_CHANNELS),
            _ => None,
        };
        if let Some(e) = expected {
            if dim != e {
                return Err(Error::shape(format!("{kind} features must have {e} dims, got {dim}")));
            }
        }
        Ok(Self {
            data,
            kind,
            frame_shift_s,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.frame_shift_s
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.data.row(t)
    }

    /// Keeps the frames where `mask` is true.
    pub fn select_frames(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.frames() {
            return Err(Error::shape(format!(
                "frame mask has {} entries for {} frames",
                mask.len(),
                self.frames()
            )));
        }
        let keep: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let data = self.data.select(ndarray::Axis(0), &keep);
        Ok(Self {
            data,
            kind: self.kind,
            frame_shift_s: self.frame_shift_s,
        })
    }

    /// Stacks rows of several matrices of the same kind and dim.
    pub fn concat_frames(parts: &[&FeatureMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::param("nothing to concatenate"))?;
        for p in parts {
            if p.dim() != first.dim() || p.kind() != first.kind() {
                return Err(Error::shape(format!(
                    "cannot pool {} x {} with {} x {}",
                    p.kind(),
                    p.dim(),
                    first.kind(),
                    first.dim()
                )));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| Error::shape(e.to_string()))?;
        Ok(Self {
            data,
            kind: first.kind,
            frame_shift_s: first.frame_shift_s,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut buf = Vec::with_capacity(32 + 8 * self.data.len());
        buf.extend_from_slice(FEATURE_MAGIC);
        buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        buf.push(self.kind.tag());
        buf.extend_from_slice(&(self.frames() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        buf.extend_from_slice(&self.frame_shift_s.to_le_bytes());
        for v in self.data.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut r = ByteReader::new(&buf);
        if r.take(4)? != FEATURE_MAGIC {
            return Err(Error::Format(format!("{}: not a feature file", path.display())));
        }
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FEATURE_VERSION,
            });
        }
        let kind = FeatureKind::from_tag(r.u8()?)?;
        let frames = r.u64()? as usize;
        let dims = r.u64()? as usize;
        let shift = r.f64()?;
        let values = r.f64_vec(frames * dims)?;
        let data = Array2::from_shape_vec((frames, dims), values)
            .map_err(|e| Error::Format(e.to_string()))?;
        Self::new(data, kind, shift)
    }

    /// Debug export: one row per frame.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<String> = (0..self.dim()).map(|d| format!("{}_{d}", self.kind)).collect();
        w.write_record(&header)?;
        for row in self.data.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Little-endian cursor over a byte buffer; shared by the binary containers.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub(crate) fn put_string(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub(crate) fn put_f64s<'a>(buf: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}
