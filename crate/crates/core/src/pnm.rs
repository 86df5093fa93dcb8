//! Minimal binary PNM support: P5 (grayscale) and P6 (RGB) with maxval <= 255.
//!
//! The pipeline is grayscale throughout, so P6 samples are reduced at decode
//! time with the usual luma weights 0.299 R + 0.587 G + 0.114 B.

use crate::error::{Error, Result};

/// Decoded image: one grayscale sample per pixel, row-major.
/// `source_channels` records whether the file was P5 (1) or P6 (3).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub source_channels: usize,
    pub samples: Vec<u8>,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    /// Advances past whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => return,
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<u32> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::BadImageHeader(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::BadImageHeader(format!("{what} out of range")))
    }
}

/// Decodes a binary PGM (P5) or PPM (P6) byte stream.
pub fn decode_image(bytes: &[u8]) -> Result<RawImage> {
    if bytes.len() < 2 {
        return Err(Error::UnsupportedMagic {
            found: String::from_utf8_lossy(bytes).into_owned(),
        });
    }
    let channels = match &bytes[..2] {
        b"P5" => 1usize,
        b"P6" => 3usize,
        other => {
            return Err(Error::UnsupportedMagic {
                found: String::from_utf8_lossy(other).into_owned(),
            })
        }
    };
    let mut reader = HeaderReader { bytes, pos: 2 };
    let width = reader.read_uint("width")? as usize;
    let height = reader.read_uint("height")? as usize;
    let maxval = reader.read_uint("maxval")?;
    if maxval > 255 {
        return Err(Error::MaxvalTooLarge(maxval));
    }
    if maxval == 0 || width == 0 || height == 0 {
        return Err(Error::BadImageHeader(format!(
            "degenerate dimensions {width}x{height} maxval {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(reader.pos) {
        Some(b' ' | b'\t' | b'\r' | b'\n') => reader.pos += 1,
        _ => {
            return Err(Error::BadImageHeader(
                "missing whitespace before payload".into(),
            ))
        }
    }
    let expected = width * height * channels;
    let payload = &bytes[reader.pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedImage {
            expected,
            got: payload.len(),
        });
    }
    let payload = &payload[..expected];

    let samples = if channels == 1 {
        payload.to_vec()
    } else {
        payload
            .chunks_exact(3)
            .map(|px| {
                let luma =
                    0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
                luma.round().min(255.0) as u8
            })
            .collect()
    };
    Ok(RawImage {
        width,
        height,
        source_channels: channels,
        samples,
    })
}

/// Encodes grayscale samples as a binary PGM with maxval 255.
pub fn encode_pgm(width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    assert_eq!(samples.len(), width * height, "sample count must match extents");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    out
}
