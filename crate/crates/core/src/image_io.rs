//! Mask and frame files: 8-bit PNG, and ASCII PGM (`P2`) for masks.
//! Gray values above 127 are shadow.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{BinaryMask, ProbMask, RgbFrame};

/// Largest pixel count accepted from an image header.
pub const MAX_PIXELS: usize = 1 << 26;

/// 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Gray8 {
    pub fn to_mask(&self) -> BinaryMask {
        BinaryMask::new(
            self.height,
            self.width,
            self.data.iter().map(|&v| u8::from(v > 127)).collect(),
        )
        .expect("raster dims are consistent")
    }

    pub fn to_prob(&self) -> ProbMask {
        ProbMask::new(
            self.height,
            self.width,
            self.data.iter().map(|&v| f64::from(v) / 255.0).collect(),
        )
        .expect("raster dims are consistent")
    }
}

fn malformed(what: impl Into<String>) -> Error {
    Error::Image(what.into())
}

/// Parses an ASCII PGM (`P2`) image, rescaling samples to 8 bits.
pub fn parse_pgm(bytes: &[u8]) -> Result<Gray8> {
    let text = std::str::from_utf8(bytes).map_err(|_| malformed("PGM is not ASCII"))?;
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_ascii_whitespace);
    if tokens.next() != Some("P2") {
        return Err(malformed("missing P2 magic"));
    }
    let mut header = |what: &str| -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| malformed(format!("bad PGM {what}")))
    };
    let width = header("width")?;
    let height = header("height")?;
    let maxval = header("maxval")?;
    if width == 0 || height == 0 || width.saturating_mul(height) > MAX_PIXELS {
        return Err(malformed(format!("implausible PGM size {width}x{height}")));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(malformed(format!("PGM maxval {maxval} out of range")));
    }
    let mut data = Vec::with_capacity(width * height);
    for t in tokens {
        let v: usize = t.parse().map_err(|_| malformed(format!("bad PGM sample `{t}`")))?;
        if v > maxval {
            return Err(malformed(format!("PGM sample {v} exceeds maxval {maxval}")));
        }
        if data.len() == width * height {
            return Err(malformed("too many PGM samples"));
        }
        data.push(((v * 255 + maxval / 2) / maxval) as u8);
    }
    if data.len() != width * height {
        return Err(malformed(format!(
            "PGM has {} samples, expected {}",
            data.len(),
            width * height
        )));
    }
    Ok(Gray8 { height, width, data })
}

pub fn encode_pgm(mask: &BinaryMask) -> String {
    let mut out = format!("P2\n{} {}\n255\n", mask.width(), mask.height());
    for row in mask.data().chunks_exact(mask.width()) {
        let line: Vec<&str> = row.iter().map(|&v| if v == 1 { "255" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Decodes a PNG of any color type into 8-bit gray.
pub fn decode_png_gray(bytes: &[u8]) -> Result<Gray8> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| malformed(format!("PNG: {e}")))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Gray8 {
        height: h as usize,
        width: w as usize,
        data: img.into_raw(),
    })
}

fn decode_gray_by_ext(path: &Path) -> Result<Gray8> {
    let bytes = std::fs::read(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm") => parse_pgm(&bytes),
        Some("png") => decode_png_gray(&bytes),
        _ => Err(malformed(format!("{}: expected .png or .pgm", path.display()))),
    }
    .map_err(|e| match e {
        Error::Image(m) => malformed(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    decode_gray_by_ext(path.as_ref()).map(|g| g.to_mask())
}

pub fn read_prob_mask(path: impl AsRef<Path>) -> Result<ProbMask> {
    decode_gray_by_ext(path.as_ref()).map(|g| g.to_prob())
}

fn encode_png_gray(height: usize, width: usize, data: Vec<u8>) -> Result<Vec<u8>> {
    let img = GrayImage::from_raw(width as u32, height as u32, data).ok_or_else(|| malformed("raster size"))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| malformed(format!("PNG encode: {e}")))?;
    Ok(out.into_inner())
}

pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    encode_png_gray(
        mask.height(),
        mask.width(),
        mask.data().iter().map(|&v| v * 255).collect(),
    )
}

pub fn encode_prob_png(prob: &ProbMask) -> Result<Vec<u8>> {
    encode_png_gray(
        prob.height(),
        prob.width(),
        prob.data().iter().map(|&p| (p * 255.0).round() as u8).collect(),
    )
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    let path = path.as_ref();
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => encode_pgm(mask).into_bytes(),
        _ => encode_mask_png(mask)?,
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn write_prob_mask(path: impl AsRef<Path>, prob: &ProbMask) -> Result<()> {
    std::fs::write(path, encode_prob_png(prob)?)?;
    Ok(())
}

pub fn decode_frame_png(bytes: &[u8]) -> Result<RgbFrame> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| malformed(format!("PNG: {e}")))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
    RgbFrame::new(h as usize, w as usize, data)
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<RgbFrame> {
    decode_frame_png(&std::fs::read(path)?)
}

pub fn write_frame(path: impl AsRef<Path>, frame: &RgbFrame) -> Result<()> {
    let data = frame.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
    let img = RgbImage::from_raw(frame.width() as u32, frame.height() as u32, data)
        .ok_or_else(|| malformed("raster size"))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| malformed(format!("PNG encode: {e}")))?;
    std::fs::write(path, out.into_inner())?;
    Ok(())
}
