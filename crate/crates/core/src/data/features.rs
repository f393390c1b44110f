//! Binary feature-sequence files.
//!
//! Layout (little-endian): `"MMFB"` | u32 version | u32 rows | u32 cols |
//! rows·cols values, row-major. Version 1 carries `f32` payloads and is the
//! on-disk form of a [`FeatureSequence`]; version 2 carries `f64` payloads
//! and is used for checkpoint tensors.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMFB";
pub const VERSION_F32: u32 = 1;
pub const VERSION_F64: u32 = 2;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Video,
    Image,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Video, Modality::Image, Modality::Text];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `T × d` matrix of per-timestep features for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    modality: Modality,
    steps: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(modality: Modality, steps: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if steps == 0 || dim == 0 {
            return Err(Error::contract(format!(
                "feature sequence needs T >= 1 and d >= 1, got {steps}x{dim}"
            )));
        }
        if steps * dim != data.len() {
            return Err(Error::contract(format!(
                "{steps}x{dim} feature sequence with {} values",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite {modality} feature at row {}, col {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            modality,
            steps,
            dim,
            data,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// New sequence made of the given rows, in order. Indices past the end
    /// repeat the last row (short-clip padding).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i.min(self.steps - 1)));
        }
        Self::new(self.modality, indices.len(), self.dim, data)
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

pub(crate) fn encode_header(version: u32, rows: usize, cols: usize) -> Result<[u8; HEADER_LEN]> {
    let rows = u32::try_from(rows).map_err(|_| Error::contract("row count exceeds u32"))?;
    let cols = u32::try_from(cols).map_err(|_| Error::contract("column count exceeds u32"))?;
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(MAGIC);
    h[4..8].copy_from_slice(&version.to_le_bytes());
    h[8..12].copy_from_slice(&rows.to_le_bytes());
    h[12..16].copy_from_slice(&cols.to_le_bytes());
    Ok(h)
}

pub(crate) struct BlockHeader {
    pub version: u32,
    pub rows: usize,
    pub cols: usize,
}

fn read_u32(bytes: &[u8], at: usize, base: usize) -> Result<u32> {
    let slice = bytes.get(at..at + 4).ok_or_else(|| Error::Parse {
        offset: base + bytes.len().min(at),
        msg: "truncated header".into(),
    })?;
    Ok(u32::from_le_bytes(slice.try_into().expect("4-byte slice")))
}

/// `base` is the absolute offset of `bytes` inside the enclosing file, so
/// error offsets point into the real file.
pub(crate) fn decode_header(bytes: &[u8], base: usize) -> Result<BlockHeader> {
    if bytes.len() < 4 || &bytes[0..4] != MAGIC {
        return Err(Error::Parse {
            offset: base,
            msg: "bad magic, expected \"MMFB\"".into(),
        });
    }
    let version = read_u32(bytes, 4, base)?;
    if version != VERSION_F32 && version != VERSION_F64 {
        return Err(Error::Parse {
            offset: base + 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let rows = read_u32(bytes, 8, base)? as usize;
    if rows == 0 {
        return Err(Error::Parse {
            offset: base + 8,
            msg: "zero rows".into(),
        });
    }
    let cols = read_u32(bytes, 12, base)? as usize;
    if cols == 0 {
        return Err(Error::Parse {
            offset: base + 12,
            msg: "zero columns".into(),
        });
    }
    Ok(BlockHeader {
        version,
        rows,
        cols,
    })
}

fn payload<'a>(
    bytes: &'a [u8],
    header: &BlockHeader,
    width: usize,
    base: usize,
) -> Result<&'a [u8]> {
    let need = header.rows * header.cols * width;
    let avail = bytes.len() - HEADER_LEN;
    if avail < need {
        return Err(Error::Parse {
            offset: base + bytes.len(),
            msg: format!("truncated payload: need {need} bytes, found {avail}"),
        });
    }
    Ok(&bytes[HEADER_LEN..HEADER_LEN + need])
}

pub fn encode_features(seq: &FeatureSequence) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + seq.data.len() * 4);
    out.extend_from_slice(&encode_header(VERSION_F32, seq.steps, seq.dim)?);
    for v in &seq.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8], modality: Modality) -> Result<FeatureSequence> {
    let header = decode_header(bytes, 0)?;
    if header.version != VERSION_F32 {
        return Err(Error::Parse {
            offset: 4,
            msg: format!(
                "feature files are version {VERSION_F32}, found {}",
                header.version
            ),
        });
    }
    let body = payload(bytes, &header, 4, 0)?;
    if bytes.len() != HEADER_LEN + body.len() {
        return Err(Error::Parse {
            offset: HEADER_LEN + body.len(),
            msg: "trailing bytes after payload".into(),
        });
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    FeatureSequence::new(modality, header.rows, header.cols, data)
}

pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let bytes = encode_features(seq)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path, modality: Modality) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, modality).map_err(|e| match e {
        Error::Parse { offset, msg } => Error::Parse {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Appends an `f64` block (version 2) to `out`.
pub(crate) fn encode_f64_block(
    out: &mut Vec<u8>,
    rows: usize,
    cols: usize,
    data: &[f64],
) -> Result<()> {
    out.extend_from_slice(&encode_header(VERSION_F64, rows, cols)?);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Decodes the `f64` block starting at `offset` inside `bytes`.
pub(crate) fn decode_f64_block(bytes: &[u8], offset: usize) -> Result<(usize, usize, Vec<f64>)> {
    let block = bytes.get(offset..).ok_or_else(|| Error::Parse {
        offset,
        msg: "block offset past end of file".into(),
    })?;
    let header = decode_header(block, offset)?;
    if header.version != VERSION_F64 {
        return Err(Error::Parse {
            offset: offset + 4,
            msg: format!(
                "tensor blocks are version {VERSION_F64}, found {}",
                header.version
            ),
        });
    }
    let body = payload(block, &header, 8, offset)?;
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header.rows, header.cols, data))
}
