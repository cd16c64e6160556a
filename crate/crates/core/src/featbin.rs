//! Flat binary feature maps: three little-endian `u32` values `(height, width,
//! dim)` followed by `height * width * dim` little-endian `f64` values,
//! row-major.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

const HEADER_LEN: usize = 12;

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    let word = |i: usize| -> Option<u32> { Some(u32::from_le_bytes(bytes.get(i..i + 4)?.try_into().ok()?)) };
    let (Some(h), Some(w), Some(d)) = (word(0), word(4), word(8)) else {
        return Err(Error::CorruptFeatureMap("truncated header".into()));
    };
    let (h, w, d) = (h as u64, w as u64, d as u64);
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::CorruptFeatureMap(format!("zero dimension in {h}x{w}x{d}")));
    }
    let payload = (bytes.len() - HEADER_LEN) as u64;
    let values = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(d))
        .filter(|v| v.checked_mul(8) == Some(payload))
        .ok_or_else(|| {
            Error::CorruptFeatureMap(format!("header {h}x{w}x{d} does not match {payload} payload bytes"))
        })?;
    let mut data = Vec::with_capacity(values as usize);
    for chunk in bytes[HEADER_LEN..].chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
    }
    FeatureMap::new(h as usize, w as usize, d as usize, data).map_err(|e| Error::CorruptFeatureMap(e.to_string()))
}

pub fn encode_feature_map(f: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * f.data().len());
    for v in [f.height(), f.width(), f.dim()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in f.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_feature_map(&std::fs::read(path)?)
}

pub fn write_feature_map(path: impl AsRef<Path>, f: &FeatureMap) -> Result<()> {
    std::fs::write(path, encode_feature_map(f))?;
    Ok(())
}
