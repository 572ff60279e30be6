//! `FMTX` feature-matrix files.
//!
//! Layout (little-endian): magic `FMTX`, u32 version (1), u64 rows, u64 cols,
//! u8 kind tag, f64 frame shift in ms, then `rows * cols` f32 values in
//! row-major order.
//!
//! Writers may append an optional metadata trailer after the matrix data:
//! magic `FMKV`, u32 byte length, then UTF-8 `key=value` lines. Readers that
//! only understand the base layout can stop after the matrix data.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FMTX";
const TRAILER_MAGIC: &[u8; 4] = b"FMKV";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    LogMel,
    Energy,
    Ppg,
    Fap,
    Generic,
}

impl FeatureKind {
    pub fn tag(self) -> u8 {
        match self {
            FeatureKind::LogMel => 0,
            FeatureKind::Energy => 1,
            FeatureKind::Ppg => 2,
            FeatureKind::Fap => 3,
            FeatureKind::Generic => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => FeatureKind::LogMel,
            1 => FeatureKind::Energy,
            2 => FeatureKind::Ppg,
            3 => FeatureKind::Fap,
            4 => FeatureKind::Generic,
            _ => return None,
        })
    }
}

/// A `T x D` matrix of per-frame values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    frame_shift_ms: f64,
    kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, frame_shift_ms: f64, kind: FeatureKind) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::format("FMTX", format!("non-finite entry {v}")));
        }
        Ok(Self {
            data,
            frame_shift_ms,
            kind,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn frame_shift_ms(&self) -> f64 {
        self.frame_shift_ms
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn with_kind(mut self, kind: FeatureKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn encode(&self, meta: &[(String, String)]) -> Vec<u8> {
        let mut out = Vec::with_capacity(33 + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols() as u64).to_le_bytes());
        out.push(self.kind.tag());
        out.extend_from_slice(&self.frame_shift_ms.to_le_bytes());
        for &v in self.data.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if !meta.is_empty() {
            let text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
            out.extend_from_slice(TRAILER_MAGIC);
            out.extend_from_slice(&(text.len() as u32).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<(Self, Vec<(String, String)>)> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::format("FMTX", "bad magic"));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::format("FMTX", format!("unsupported version {version}")));
        }
        let rows = usize::try_from(cur.u64()?).map_err(|_| Error::format("FMTX", "row count"))?;
        let cols = usize::try_from(cur.u64()?).map_err(|_| Error::format("FMTX", "col count"))?;
        let kind = FeatureKind::from_tag(cur.take(1)?[0])
            .ok_or_else(|| Error::format("FMTX", "unknown kind tag"))?;
        let shift = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format("FMTX", "matrix too large"))?;
        let raw = cur.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format("FMTX", "matrix too large"))?,
        )?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let data = Array2::from_shape_vec((rows, cols), data).unwrap();
        let mut meta = Vec::new();
        if cur.pos < bytes.len() {
            if cur.take(4)? != TRAILER_MAGIC {
                return Err(Error::format("FMTX", "trailing bytes without metadata magic"));
            }
            let len = cur.u32()? as usize;
            let text = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::format("FMTX", "metadata is not UTF-8"))?;
            for line in text.lines().filter(|l| !l.is_empty()) {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::format("FMTX", format!("bad metadata line {line:?}")))?;
                meta.push((k.to_string(), v.to_string()));
            }
            if cur.pos != bytes.len() {
                return Err(Error::format("FMTX", "trailing bytes after metadata"));
            }
        }
        Ok((Self::new(data, shift, kind)?, meta))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("FMTX", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_fmtx(path: &Path, m: &FeatureMatrix, meta: &[(String, String)]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&m.encode(meta)).map_err(|e| Error::io(path, e))
}

pub fn read_fmtx(path: &Path) -> Result<(FeatureMatrix, Vec<(String, String)>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    FeatureMatrix::decode(&bytes)
}
