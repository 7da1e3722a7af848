//! Checkpoint files.
//!
//! ```text
//! "SVDM" | u32 version = 1 | u8 architecture tag (0 pooled_fc, 1 conv_pool)
//! then, until end of file, per tensor:
//!   u32 name length | name (UTF-8) | u32 rank | rank x u32 dims | f64 payload
//! ```
//! Little-endian throughout.

use std::fs;
use std::path::Path;

use super::{Architecture, NamedTensor, ScorerParameters, Tensor};
use crate::error::{Error, Result};
use crate::features::codec::Reader;

pub const MAGIC: &[u8; 4] = b"SVDM";
pub const VERSION: u32 = 1;
const MAX_NAME: usize = 256;
const MAX_RANK: usize = 8;

pub fn encode_checkpoint(params: &ScorerParameters) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(params.arch().tag());
    for e in params.entries() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.tensor.shape.len() as u32).to_le_bytes());
        for &d in &e.tensor.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &e.tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ScorerParameters> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MAGIC)?;
    r.expect_version(VERSION)?;
    let tag = r.u8("architecture tag")?;
    let arch = Architecture::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown architecture tag {tag}")))?;
    let mut entries = Vec::new();
    while !r.is_empty() {
        let name_len = r.u32("name length")? as usize;
        if name_len == 0 || name_len > MAX_NAME {
            return Err(Error::Format(format!("tensor name length {name_len} out of range")));
        }
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("tensor {name}: rank {rank} out of range")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = r.u32("dimension")? as usize;
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::Format(format!("tensor {name}: size overflow")))?;
            shape.push(d);
        }
        if count.saturating_mul(8) > r.remaining() {
            return Err(Error::Format(format!("truncated file: tensor {name} payload")));
        }
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(r.f64("tensor payload")?);
        }
        entries.push(NamedTensor {
            name,
            tensor: Tensor { shape, data },
        });
    }
    ScorerParameters::from_entries(arch, entries).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ScorerParameters) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ScorerParameters> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
