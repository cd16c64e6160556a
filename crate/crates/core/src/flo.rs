//! Middlebury `.flo` flow files: the float sentinel `202021.25` ("PIEH"),
//! little-endian `i32` width and height, then `width * height` interleaved
//! `(dx, dy)` `f32` pairs in row-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;
/// Largest width or height accepted in a header.
pub const MAX_FLO_DIM: usize = 1 << 16;
const HEADER_LEN: usize = 12;

/// Parsed `.flo` header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloHeader {
    pub magic: f32,
    pub width: i32,
    pub height: i32,
}

impl FloHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Option<[u8; 4]> { bytes.get(i..i + 4)?.try_into().ok() };
        let magic = word(0).map(f32::from_le_bytes).ok_or(Error::NotFlo)?;
        if magic != FLO_MAGIC {
            return Err(Error::NotFlo);
        }
        let (Some(w), Some(h)) = (word(4), word(8)) else {
            return Err(Error::CorruptFlow("truncated header".into()));
        };
        let header = Self {
            magic,
            width: i32::from_le_bytes(w),
            height: i32::from_le_bytes(h),
        };
        header.dims()?;
        Ok(header)
    }

    /// `(width, height)` once validated against [`MAX_FLO_DIM`].
    pub fn dims(&self) -> Result<(usize, usize)> {
        let ok = |v: i32| (1..=MAX_FLO_DIM as i64).contains(&i64::from(v));
        if !ok(self.width) || !ok(self.height) {
            return Err(Error::CorruptFlow(format!(
                "implausible dimensions {}x{}",
                self.width, self.height
            )));
        }
        Ok((self.width as usize, self.height as usize))
    }
}

/// Decodes a complete `.flo` buffer.
pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    let header = FloHeader::parse(bytes)?;
    let (width, height) = header.dims()?;
    let cells = width * height;
    let expected = HEADER_LEN as u64 + 8 * cells as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::CorruptFlow(format!(
            "expected {expected} bytes for {width}x{height}, got {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(cells);
    for px in bytes[HEADER_LEN..].chunks_exact(8) {
        let dx = f32::from_le_bytes(px[0..4].try_into().expect("4 bytes"));
        let dy = f32::from_le_bytes(px[4..8].try_into().expect("4 bytes"));
        if !dx.is_finite() || !dy.is_finite() {
            return Err(Error::CorruptFlow("non-finite flow value".into()));
        }
        data.push([dx, dy]);
    }
    FlowField::new(height, width, data)
}

/// Encodes a flow field; the exact inverse of [`read_flo`].
pub fn write_flo(flow: &FlowField) -> Result<Vec<u8>> {
    if flow.width() > MAX_FLO_DIM || flow.height() > MAX_FLO_DIM {
        return Err(Error::InvalidArgument(format!(
            "flow of {}x{} exceeds the .flo size limit",
            flow.width(),
            flow.height()
        )));
    }
    if flow.data().iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite flow value".into()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * flow.data().len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for [dx, dy] in flow.data() {
        out.extend_from_slice(&dx.to_le_bytes());
        out.extend_from_slice(&dy.to_le_bytes());
    }
    Ok(out)
}

pub fn read_flo_file(path: impl AsRef<Path>) -> Result<FlowField> {
    read_flo(&std::fs::read(path)?)
}

pub fn write_flo_file(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    std::fs::write(path, write_flo(flow)?)?;
    Ok(())
}
