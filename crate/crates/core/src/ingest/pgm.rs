//! 8-bit grayscale images and the binary PGM (P5) codec.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("unsupported PGM variant {0:?} (only binary P5 is read)")]
    UnsupportedVariant(String),
    #[error("malformed PGM header: {0}")]
    BadHeader(&'static str),
    #[error("unsupported PGM maxval {0} (expected 255)")]
    UnsupportedMaxval(u32),
    #[error("truncated PGM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Row-major 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0)
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    /// Returns `None` when the pixel count does not match the dimensions.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == width * height).then_some(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Pixel at signed coordinates; `None` outside the image.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> Option<u8> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            None
        } else {
            Some(self.get(x as usize, y as usize))
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }
}

fn skip_whitespace_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_header_number(bytes: &[u8], pos: &mut usize) -> Result<u32, PgmError> {
    *pos = skip_whitespace_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(PgmError::BadHeader("expected a decimal number"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(PgmError::BadHeader("number out of range"))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(PgmError::BadHeader("missing magic number"));
    }
    if bytes[1] != b'5' {
        return Err(PgmError::UnsupportedVariant(
            String::from_utf8_lossy(&bytes[..2]).into_owned(),
        ));
    }
    let mut pos = 2;
    let width = read_header_number(bytes, &mut pos)? as usize;
    let height = read_header_number(bytes, &mut pos)? as usize;
    let maxval = read_header_number(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(PgmError::BadHeader("zero dimension"));
    }
    if maxval != 255 {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(PgmError::BadHeader("missing whitespace after maxval"));
    }
    pos += 1;
    let expected = width * height;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(PgmError::Truncated { expected, found: payload.len() });
    }
    Ok(GrayImage { width, height, pixels: payload[..expected].to_vec() })
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn load_pgm(path: &Path) -> Result<GrayImage, PgmError> {
    let bytes = fs::read(path)
        .map_err(|source| PgmError::Io { path: path.display().to_string(), source })?;
    decode_pgm(&bytes)
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> std::io::Result<()> {
    fs::write(path, encode_pgm(image))
}
