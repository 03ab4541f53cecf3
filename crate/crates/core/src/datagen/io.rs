//! Binary PGM (P5) images and raw little-endian field dumps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fidelity::BinaryMask;
use crate::grid::Field2D;

/// Leading bytes of a raw field dump, followed by `u64` height and width
/// and the row-major `f64` values, all little-endian.
pub const FIELD_MAGIC: &[u8; 8] = b"PDSEGF64";

fn parse_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        offset,
        message: message.into(),
    })
}

/// Encodes an 8-bit greyscale P5 image.
pub fn encode_pgm(height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// A decoded P5 image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub height: usize,
    pub width: usize,
    pub maxval: usize,
    /// Byte offset of the first raster byte in the file.
    pub raster_offset: usize,
    pub pixels: Vec<u8>,
}

/// Decodes an 8-bit P5 image.
pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return parse_err(0, "missing P5 magic number");
    }
    let mut pos = 2;
    let mut header = [0usize; 3];
    for (k, slot) in header.iter_mut().enumerate() {
        // Whitespace and comments between header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][k];
            return parse_err(start, format!("expected {what}"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *slot = match text.parse() {
            Ok(v) => v,
            Err(_) => return parse_err(start, format!("header value {text} out of range")),
        };
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return parse_err(3, "image dimensions must be positive");
    }
    if maxval == 0 || maxval > 255 {
        return parse_err(pos, format!("unsupported maxval {maxval}; only 8-bit images are read"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return parse_err(pos, "expected single whitespace before raster"),
    }
    let n = width * height;
    if bytes.len() < pos + n {
        return parse_err(
            bytes.len(),
            format!("raster truncated: expected {n} bytes, found {}", bytes.len() - pos),
        );
    }
    if bytes.len() > pos + n {
        return parse_err(pos + n, "trailing bytes after raster");
    }
    Ok(Pgm {
        height,
        width,
        maxval,
        raster_offset: pos,
        pixels: bytes[pos..pos + n].to_vec(),
    })
}

/// Writes a field quantized as `round(255 * clamp(u, 0, 1))`.
pub fn write_field_pgm(path: &Path, f: &Field2D) -> Result<()> {
    let px: Vec<u8> = f
        .values()
        .iter()
        .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
        .collect();
    fs::write(path, encode_pgm(f.height(), f.width(), &px))?;
    Ok(())
}

/// Alias of [`write_field_pgm`] for image data.
pub fn write_pgm(path: &Path, f: &Field2D) -> Result<()> {
    write_field_pgm(path, f)
}

/// Reads a P5 image as a field with values `pixel / maxval`.
pub fn read_pgm(path: &Path) -> Result<Field2D> {
    let pgm = decode_pgm(&fs::read(path)?)?;
    let maxval = pgm.maxval as f64;
    Field2D::from_vec(
        pgm.height,
        pgm.width,
        pgm.pixels.iter().map(|&p| p as f64 / maxval).collect(),
    )
}

/// Writes a mask with foreground 255 and background 0.
pub fn write_mask_pgm(path: &Path, m: &BinaryMask) -> Result<()> {
    let px: Vec<u8> = m.values().iter().map(|&v| v * 255).collect();
    fs::write(path, encode_pgm(m.height(), m.width(), &px))?;
    Ok(())
}

/// Reads a `{0, 255}` mask; any other pixel value is a parse error.
pub fn read_mask_pgm(path: &Path) -> Result<BinaryMask> {
    let pgm = decode_pgm(&fs::read(path)?)?;
    let mut labels = Vec::with_capacity(pgm.pixels.len());
    for (k, &p) in pgm.pixels.iter().enumerate() {
        match p {
            0 => labels.push(0),
            255 => labels.push(1),
            other => {
                return parse_err(
                    pgm.raster_offset + k,
                    format!("mask pixel value {other} is neither 0 nor 255"),
                )
            }
        }
    }
    BinaryMask::from_vec(pgm.height, pgm.width, labels)
}

pub fn encode_field_raw(f: &Field2D) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * f.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&(f.height() as u64).to_le_bytes());
    out.extend_from_slice(&(f.width() as u64).to_le_bytes());
    for v in f.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field_raw(bytes: &[u8]) -> Result<Field2D> {
    if bytes.len() < 24 || &bytes[..8] != FIELD_MAGIC {
        return parse_err(0, "missing field magic");
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
    let (h, w) = (word(8), word(16));
    let expected = h.checked_mul(w).and_then(|n| n.checked_mul(8)).map(|n| n + 24);
    if expected != Some(bytes.len()) {
        return parse_err(24, format!("payload size does not match {h}x{w} field"));
    }
    let values = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Field2D::from_vec(h, w, values)
}

/// Lossless field export.
pub fn write_field_raw(path: &Path, f: &Field2D) -> Result<()> {
    fs::write(path, encode_field_raw(f))?;
    Ok(())
}

pub fn read_field_raw(path: &Path) -> Result<Field2D> {
    decode_field_raw(&fs::read(path)?)
}
