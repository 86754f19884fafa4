//! Binary greyscale PGM (`P5`) reading and writing, 8-bit only.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::GrayImage;
use crate::error::{Error, Result};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgmError {
    #[error("bad magic {0:?}, expected \"P5\"")]
    BadMagic(String),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("maxval {0} exceeds 255")]
    MaxvalTooLarge(u32),
    #[error("truncated payload: expected {expected} bytes, found {got}")]
    Truncated { expected: usize, got: usize },
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, PgmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::BadHeader(format!("missing {what}")))
    }
}

/// Decodes a `P5` image; intensities are divided by maxval.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let shown = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PgmError::BadMagic(shown));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::BadHeader(format!(
            "zero dimension {width}x{height}"
        )));
    }
    if maxval == 0 {
        return Err(PgmError::BadHeader("maxval is zero".into()));
    }
    if maxval > 255 {
        return Err(PgmError::MaxvalTooLarge(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(PgmError::BadHeader("no whitespace before raster".into())),
    }
    let expected = width * height;
    let raster = &bytes[h.pos..];
    if raster.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            got: raster.len(),
        });
    }
    let scale = f64::from(maxval);
    let pixels = raster[..expected]
        .iter()
        .map(|&b| f64::from(b) / scale)
        .collect();
    Ok(GrayImage::new(height, width, pixels).expect("dimensions checked above"))
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_pgm(&bytes)?)
}

/// Encodes with maxval 255, rounding each intensity to the nearest level.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| (v * 255.0).round() as u8));
    out
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}
