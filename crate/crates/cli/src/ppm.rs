//! Binary PPM (P6, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use pottsseg::ColorImage;
use thiserror::Error;

/// Largest accepted image, in pixels.
pub const MAX_PIXELS: usize = 1 << 22;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("byte {offset}: {message}")]
    Format { offset: usize, message: String },
}

fn format_err(offset: usize, message: impl Into<String>) -> PpmError {
    PpmError::Format {
        offset,
        message: message.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    /// Skip whitespace and `#` comments.
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, PpmError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| format_err(start, format!("{what} is too large")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ColorImage, PpmError> {
    match bytes.get(..2) {
        Some(b"P6") => {}
        Some([b'P', d]) if d.is_ascii_digit() => {
            return Err(format_err(
                0,
                format!("unsupported format P{}, expected binary P6", *d as char),
            ))
        }
        _ => return Err(format_err(0, "missing P6 magic number")),
    }
    let mut h = Header { bytes, pos: 2 };
    if !bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(format_err(2, "expected whitespace after the magic number"));
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_at = {
        h.skip_space();
        h.pos
    };
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(format_err(
            maxval_at,
            format!("maxval {maxval} is not supported, expected 255"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(format_err(
            maxval_at,
            format!("empty image {width}x{height}"),
        ));
    }
    let pixels = width.checked_mul(height).filter(|&n| n <= MAX_PIXELS);
    let Some(pixels) = pixels else {
        return Err(format_err(
            maxval_at,
            format!("{width}x{height} exceeds the limit of {MAX_PIXELS} pixels"),
        ));
    };
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => {
            return Err(format_err(
                h.pos,
                "expected one whitespace byte after maxval",
            ))
        }
    }
    let need = 3 * pixels;
    let data = &bytes[h.pos..];
    if data.len() < need {
        return Err(format_err(
            h.pos + data.len(),
            format!(
                "truncated pixel data: expected {need} bytes, found {}",
                data.len()
            ),
        ));
    }
    Ok(ColorImage::from_rgb8(width, height, &data[..need]).expect("payload size checked"))
}

pub fn encode(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn read(path: &Path) -> Result<ColorImage, PpmError> {
    let bytes = fs::read(path).map_err(|source| PpmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

pub fn write(path: &Path, image: &ColorImage) -> Result<(), PpmError> {
    let bytes = encode(image.width(), image.height(), &image.to_rgb8());
    fs::write(path, bytes).map_err(|source| PpmError::Io {
        path: path.display().to_string(),
        source,
    })
}
