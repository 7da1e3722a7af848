//! Binary feature files.
//!
//! Pooled feature (`SVDF`):
//! ```text
//! "SVDF" | u32 version = 1 | u32 D | D x f32
//! ```
//! Spectrogram cache (`SVDS`):
//! ```text
//! "SVDS" | u32 version = 1 | u32 T | u32 257 | T x 257 x f32, row-major
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{PooledFeature, Spectrogram, N_BINS};
use crate::error::{Error, Result};

pub const POOLED_MAGIC: &[u8; 4] = b"SVDF";
pub const SPECTROGRAM_MAGIC: &[u8; 4] = b"SVDS";
pub const VERSION: u32 = 1;

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated file while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_version(&mut self, version: u32) -> Result<()> {
        let v = self.u32("version")?;
        if v != version {
            return Err(Error::Format(format!("unsupported version {v}, expected {version}")));
        }
        Ok(())
    }

    fn f32_block(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("{what}: size overflow")))?;
        if bytes > self.remaining() {
            return Err(Error::Format(format!(
                "truncated file: {what} declares {n} values but only {} bytes remain",
                self.remaining()
            )));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let v = self.f32(what)?;
            if !v.is_finite() {
                return Err(Error::Format(format!("{what}: non-finite value {v}")));
            }
            out.push(v as f64);
        }
        Ok(out)
    }
}

fn trailing_check(r: &Reader<'_>) -> Result<()> {
    if r.is_empty() {
        Ok(())
    } else {
        Err(Error::Format(format!("{} trailing bytes after payload", r.remaining())))
    }
}

pub fn encode_pooled(feature: &PooledFeature) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * feature.vector.len());
    out.extend_from_slice(POOLED_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(feature.vector.len() as u32).to_le_bytes());
    for &v in &feature.vector {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_pooled(bytes: &[u8]) -> Result<PooledFeature> {
    let mut r = Reader::new(bytes);
    r.expect_magic(POOLED_MAGIC)?;
    r.expect_version(VERSION)?;
    let dim = r.u32("dimension")? as usize;
    if dim == 0 {
        return Err(Error::Format("feature dimension is zero".into()));
    }
    let vector = r.f32_block(dim, "feature vector")?;
    trailing_check(&r)?;
    Ok(PooledFeature { vector })
}

pub fn encode_spectrogram(s: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * s.data().len());
    out.extend_from_slice(SPECTROGRAM_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(s.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(s.bins() as u32).to_le_bytes());
    for &v in s.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_spectrogram(bytes: &[u8]) -> Result<Spectrogram> {
    let mut r = Reader::new(bytes);
    r.expect_magic(SPECTROGRAM_MAGIC)?;
    r.expect_version(VERSION)?;
    let frames = r.u32("frame count")? as usize;
    let bins = r.u32("bin count")? as usize;
    if bins != N_BINS {
        return Err(Error::Format(format!("spectrogram has {bins} bins, expected {N_BINS}")));
    }
    if frames == 0 {
        return Err(Error::Format("spectrogram has zero frames".into()));
    }
    let n = frames
        .checked_mul(bins)
        .ok_or_else(|| Error::Format("spectrogram size overflow".into()))?;
    let data = r.f32_block(n, "spectrogram")?;
    trailing_check(&r)?;
    Spectrogram::new(frames, bins, data)
}

pub fn save_pooled_feature(path: impl AsRef<Path>, f: &PooledFeature) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pooled(f)).map_err(|e| Error::io(path, e))
}

pub fn load_pooled_feature(path: impl AsRef<Path>) -> Result<PooledFeature> {
    let path = path.as_ref();
    decode_pooled(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_spectrogram(path: impl AsRef<Path>, s: &Spectrogram) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_spectrogram(s)).map_err(|e| Error::io(path, e))
}

pub fn load_spectrogram(path: impl AsRef<Path>) -> Result<Spectrogram> {
    let path = path.as_ref();
    decode_spectrogram(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pooled(n: usize) -> PooledFeature {
        PooledFeature {
            vector: (0..n).map(|i| (i as f32 * 0.37 - 3.0) as f64).collect(),
        }
    }

    #[test]
    fn header_layout_is_exact() {
        let bytes = encode_pooled(&PooledFeature {
            vector: vec![1.0, -2.0],
        });
        assert_eq!(&bytes[..4], b"SVDF");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 20);
    }

    #[test]
    fn declared_768() {
        let f = decode_pooled(&encode_pooled(&pooled(768))).unwrap();
        assert_eq!(f.vector.len(), 768);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode_pooled(&pooled(768));
        bytes.truncate(bytes.len() - 4);
        let err = decode_pooled(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn bad_magic_version_and_nan() {
        let good = encode_pooled(&pooled(4));
        let mut b = good.clone();
        b[0] = b'X';
        assert!(decode_pooled(&b).is_err());
        let mut b = good.clone();
        b[4] = 2;
        assert!(decode_pooled(&b).is_err());
        let mut b = good.clone();
        b[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_pooled(&b).is_err());
        let mut b = good;
        b.push(0);
        assert!(decode_pooled(&b).is_err());
    }

    #[test]
    fn spectrogram_wrong_bins() {
        let s = Spectrogram::new(2, N_BINS, vec![0.5; 2 * N_BINS]).unwrap();
        let mut b = encode_spectrogram(&s);
        b[12..16].copy_from_slice(&256u32.to_le_bytes());
        assert!(decode_spectrogram(&b).is_err());
        assert_eq!(decode_spectrogram(&encode_spectrogram(&s)).unwrap(), s);
    }

    #[test]
    fn huge_declared_dimension_does_not_allocate() {
        let mut b = Vec::new();
        b.extend_from_slice(b"SVDF");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_pooled(&b).is_err());
    }

    proptest! {
        #[test]
        fn pooled_roundtrip_is_bitwise(v in prop::collection::vec(-1e6f32..1e6f32, 1..64)) {
            let f = PooledFeature { vector: v.iter().map(|&x| x as f64).collect() };
            let bytes = encode_pooled(&f);
            let back = decode_pooled(&bytes).unwrap();
            prop_assert_eq!(encode_pooled(&back), bytes);
            prop_assert_eq!(back, f);
        }

        #[test]
        fn decoders_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_pooled(&bytes);
            let _ = decode_spectrogram(&bytes);
        }
    }
}
