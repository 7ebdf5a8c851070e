//! The `MQLF` feature-file codec.
//!
//! Layout (little-endian): magic `MQLF`, version `u32 = 1`, count `u32`,
//! dimension `u32`, then `count * dimension` `f32` values row-major, then
//! `count` photo-id records of `(u16 length, UTF-8 bytes)` in row order.

use std::fs;
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MQLF";
pub const VERSION: u32 = 1;

pub fn encode(features: &FeatureMatrix, out: &mut Vec<u8>) -> Result<()> {
    let count = u32::try_from(features.len())
        .map_err(|_| Error::format("row count exceeds u32"))?;
    let dim = u32::try_from(features.dim()).map_err(|_| Error::format("dimension exceeds u32"))?;
    out.reserve(16 + features.values().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for v in features.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for id in features.ids() {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::format(format!("photo id `{id}` longer than 65535 bytes")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(format!(
                "truncated payload while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decodes one block from the front of `buf`, returning it with the number
/// of bytes consumed.
pub fn decode_prefix(buf: &[u8]) -> Result<(FeatureMatrix, usize)> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            "MQLF"
        )));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let count = cur.u32("count")? as usize;
    let dim = cur.u32("dimension")? as usize;
    let n_values = count
        .checked_mul(dim)
        .ok_or_else(|| Error::format("count * dimension overflows"))?;
    let raw = cur.take(
        n_values
            .checked_mul(4)
            .ok_or_else(|| Error::format("payload size overflows"))?,
        "values",
    )?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut ids = Vec::with_capacity(count);
    for row in 0..count {
        let len = u16::from_le_bytes(cur.take(2, "id length")?.try_into().unwrap()) as usize;
        let bytes = cur.take(len, "id bytes")?;
        let id = std::str::from_utf8(bytes)
            .map_err(|_| Error::format(format!("photo id of row {row} is not UTF-8")))?;
        ids.push(id.to_owned());
    }
    let pos = cur.pos;
    Ok((FeatureMatrix::from_parts(ids, dim, values)?, pos))
}

/// Decodes a buffer holding exactly one block.
pub fn decode(buf: &[u8]) -> Result<FeatureMatrix> {
    let (m, used) = decode_prefix(buf)?;
    if used != buf.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after id records",
            buf.len() - used
        )));
    }
    Ok(m)
}

/// A text header line followed by several blocks, used for model files.
pub fn encode_blocks(header: &str, blocks: &[FeatureMatrix]) -> Result<Vec<u8>> {
    if header.contains('\n') {
        return Err(Error::format("model header must be a single line"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for b in blocks {
        encode(b, &mut out)?;
    }
    Ok(out)
}

pub fn decode_blocks(buf: &[u8], count: usize) -> Result<(String, Vec<FeatureMatrix>)> {
    let nl = buf
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("model file has no header line"))?;
    let header = std::str::from_utf8(&buf[..nl])
        .map_err(|_| Error::format("model header is not UTF-8"))?
        .to_owned();
    let mut pos = nl + 1;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let (m, used) = decode_prefix(&buf[pos..])?;
        blocks.push(m);
        pos += used;
    }
    if pos != buf.len() {
        return Err(Error::format(format!("{} trailing bytes after model blocks", buf.len() - pos)));
    }
    Ok((header, blocks))
}

/// Row ids `{prefix}{i}` for matrices whose rows are not photos.
pub fn indexed_ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn write_features(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    encode(features, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
