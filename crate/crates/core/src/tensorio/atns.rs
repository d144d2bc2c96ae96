//! The ATNS container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! 0   magic  "ATNS"
//! 4   version
//! 8   L
//! 12  H
//! 16  T
//! 20  N  (utterance-id byte length)
//! 24  N bytes UTF-8 utterance id
//! ```
//!
//! Version 1 (attention) follows with `L*H*T*T` little-endian `f32`
//! weights in `[l][h][q][k]` row-major order.
//!
//! Version 2 (feature sequence, `L = H = 1`) follows with a `u32` feature
//! dimension `d` and then `T*d` little-endian `f32` values, row-major.

use std::io::{Read, Write};

use ndarray::Array4;

use super::{AttentionTensor, ValidationMode};
use crate::error::{Error, Result};
use crate::segmentation::FeatureSequence;

pub const ATNS_MAGIC: &[u8; 4] = b"ATNS";
pub const ATNS_VERSION_ATTENTION: u32 = 1;
pub const ATNS_VERSION_FEATURES: u32 = 2;

/// Writes a strict-valid tensor.
pub fn write_attention<W: Write>(tensor: &AttentionTensor, sink: W) -> Result<()> {
    tensor.validate(ValidationMode::Strict)?;
    write_unchecked(tensor, sink)
}

/// Writes a tensor that only needs to be lax-valid (output of pruning).
pub fn write_attention_lax<W: Write>(tensor: &AttentionTensor, sink: W) -> Result<()> {
    tensor.validate(ValidationMode::Lax)?;
    write_unchecked(tensor, sink)
}

fn write_unchecked<W: Write>(tensor: &AttentionTensor, mut sink: W) -> Result<()> {
    let id = tensor.utterance_id().as_bytes();
    let mut buf = Vec::with_capacity(24 + id.len() + tensor.weights().len() * 4);
    buf.extend_from_slice(ATNS_MAGIC);
    for v in [
        ATNS_VERSION_ATTENTION,
        dim_u32(tensor.num_layers())?,
        dim_u32(tensor.num_heads())?,
        dim_u32(tensor.seq_len())?,
        dim_u32(id.len())?,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(id);
    // standard layout iteration order is [l][h][q][k]
    for w in tensor.weights().iter() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::domain(format!("dimension {v} does not fit in u32")))
}

struct Header {
    version: u32,
    num_layers: usize,
    num_heads: usize,
    seq_len: usize,
    utterance_id: String,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated stream while reading {what}"),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let nbytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.pos as u64, "payload size overflows"))?;
        let raw = self.take(nbytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn read_header(cur: &mut Cursor<'_>) -> Result<Header> {
    let magic = cur.take(4, "magic")?;
    if magic != ATNS_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = cur.u32("version")?;
    if version != ATNS_VERSION_ATTENTION && version != ATNS_VERSION_FEATURES {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 3];
    for (i, (d, name)) in dims.iter_mut().zip(["L", "H", "T"]).enumerate() {
        *d = cur.u32(name)? as usize;
        if *d == 0 {
            return Err(Error::format(8 + 4 * i as u64, format!("{name} must be positive")));
        }
    }
    let id_len = cur.u32("utterance-id length")? as usize;
    let id_offset = cur.pos as u64;
    let id = cur.take(id_len, "utterance id")?;
    let utterance_id = std::str::from_utf8(id)
        .map_err(|e| Error::format(id_offset + e.valid_up_to() as u64, "utterance id is not UTF-8"))?
        .to_owned();
    Ok(Header {
        version,
        num_layers: dims[0],
        num_heads: dims[1],
        seq_len: dims[2],
        utterance_id,
    })
}

/// Reads a version-1 ATNS stream and validates it in `mode`.
pub fn read_attention<R: Read>(mut source: R, mode: ValidationMode) -> Result<AttentionTensor> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let header = read_header(&mut cur)?;
    if header.version != ATNS_VERSION_ATTENTION {
        return Err(Error::format(4, "stream holds a feature sequence, not attention"));
    }
    let (l, h, t) = (header.num_layers, header.num_heads, header.seq_len);
    let count = [l, h, t, t]
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(8, "tensor size overflows"))?;
    let data = cur.f32s(count, "weights")?;
    cur.finish()?;
    let weights = Array4::from_shape_vec((l, h, t, t), data)
        .map_err(|e| Error::format(8, format!("bad shape: {e}")))?;
    AttentionTensor::new(header.utterance_id, weights, mode)
}

/// Writes a feature sequence as a version-2 ATNS stream (values stored as `f32`).
pub fn write_features<W: Write>(
    utterance_id: &str,
    features: &FeatureSequence,
    mut sink: W,
) -> Result<()> {
    let id = utterance_id.as_bytes();
    let mut buf = Vec::with_capacity(28 + id.len() + features.len() * features.dim() * 4);
    buf.extend_from_slice(ATNS_MAGIC);
    for v in [ATNS_VERSION_FEATURES, 1, 1, dim_u32(features.len())?, dim_u32(id.len())?] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(id);
    buf.extend_from_slice(&dim_u32(features.dim())?.to_le_bytes());
    for row in features.rows() {
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

/// Reads a version-2 ATNS stream, returning the utterance id and features.
pub fn read_features<R: Read>(mut source: R) -> Result<(String, FeatureSequence)> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let header = read_header(&mut cur)?;
    if header.version != ATNS_VERSION_FEATURES {
        return Err(Error::format(4, "stream holds attention, not a feature sequence"));
    }
    if header.num_layers != 1 || header.num_heads != 1 {
        return Err(Error::format(8, "feature streams must have L = H = 1"));
    }
    let dim_offset = cur.pos as u64;
    let dim = cur.u32("feature dimension")? as usize;
    if dim == 0 {
        return Err(Error::format(dim_offset, "feature dimension must be positive"));
    }
    let count = header
        .seq_len
        .checked_mul(dim)
        .ok_or_else(|| Error::format(dim_offset, "feature size overflows"))?;
    let data = cur.f32s(count, "features")?;
    cur.finish()?;
    let features =
        FeatureSequence::from_flat(header.seq_len, dim, data.into_iter().map(f64::from).collect())?;
    Ok((header.utterance_id, features))
}
