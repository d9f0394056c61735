//! Binary 8-bit PGM (P5) heatmaps.
//!
//! A value `v` in the display range `[lo, hi]` maps to gray level
//! `floor((v - lo) / (hi - lo) * 255 + 0.5)` clamped to 0..=255, i.e.
//! round half up. The range is written as a `# range lo hi` header comment
//! so maps can be dequantized from the file alone.

use std::fs;
use std::path::Path;

use crate::error::FormatError;

/// How values are mapped onto gray levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalization {
    /// The map's own minimum and maximum.
    MinMax,
    /// A fixed range, e.g. `[0, 1]` for sigmoid excitations.
    Fixed { lo: f64, hi: f64 },
}

/// A decoded PGM.
#[derive(Clone, Debug, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    /// Display range from the header comment, when present.
    pub range: Option<(f64, f64)>,
}

impl Pgm {
    /// Midpoint value of gray level `q` under the recorded range.
    pub fn dequantize(&self, q: u8) -> Option<f64> {
        let (lo, hi) = self.range?;
        Some(lo + (hi - lo) * q as f64 / 255.0)
    }
}

/// Gray level of `v` on `[lo, hi]`, rounding half up.
pub fn quantize(v: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return 0;
    }
    let level = ((v - lo) / (hi - lo) * 255.0 + 0.5).floor();
    level.clamp(0.0, 255.0) as u8
}

/// The display range `normalization` gives for `values`.
pub fn resolve_range(values: &[f64], normalization: Normalization) -> (f64, f64) {
    match normalization {
        Normalization::Fixed { lo, hi } => (lo, hi),
        Normalization::MinMax => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if values.is_empty() {
                (0.0, 1.0)
            } else {
                (lo, hi)
            }
        }
    }
}

pub fn encode(width: usize, height: usize, pixels: &[u8], range: Option<(f64, f64)>) -> Vec<u8> {
    let mut out = b"P5\n".to_vec();
    if let Some((lo, hi)) = range {
        out.extend_from_slice(format!("# range {lo:?} {hi:?}\n").as_bytes());
    }
    out.extend_from_slice(format!("{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(pixels);
    out
}

/// Writes a row-major `height x width` map. Non-finite values are rejected.
pub fn write_heatmap_pgm(
    path: &Path,
    map: &[f64],
    height: usize,
    width: usize,
    normalization: Normalization,
) -> Result<(), FormatError> {
    if map.len() != height * width {
        return Err(FormatError::Malformed(format!(
            "map of {} values is not {height}x{width}",
            map.len()
        )));
    }
    if let Some(bad) = map.iter().find(|v| !v.is_finite()) {
        return Err(FormatError::Malformed(format!("heatmap value {bad} is not finite")));
    }
    let (lo, hi) = resolve_range(map, normalization);
    let pixels: Vec<u8> = map.iter().map(|&v| quantize(v, lo, hi)).collect();
    fs::write(path, encode(width, height, &pixels, Some((lo, hi)))).map_err(|e| FormatError::io(path, e))
}

/// Writes raw gray levels with no range comment.
pub fn write_gray_pgm(path: &Path, pixels: &[u8], height: usize, width: usize) -> Result<(), FormatError> {
    fs::write(path, encode(width, height, pixels, None)).map_err(|e| FormatError::io(path, e))
}

pub fn decode(bytes: &[u8]) -> Result<Pgm, FormatError> {
    let mut pos = 0;
    let mut range = None;
    let mut tokens = Vec::new();
    // header: magic, width, height, maxval; comments run to end of line
    while tokens.len() < 4 {
        match bytes.get(pos) {
            None => {
                return Err(FormatError::Truncated {
                    offset: pos,
                    needed: 1,
                })
            }
            Some(b'#') => {
                let end = bytes[pos..]
                    .iter()
                    .position(|&b| b == b'\n')
                    .map_or(bytes.len(), |e| pos + e);
                let comment = std::str::from_utf8(&bytes[pos + 1..end]).unwrap_or("");
                let parts: Vec<&str> = comment.split_whitespace().collect();
                if let ["range", lo, hi] = parts[..] {
                    if let (Ok(lo), Ok(hi)) = (lo.parse(), hi.parse()) {
                        range = Some((lo, hi));
                    }
                }
                pos = end;
            }
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(_) => {
                let end = bytes[pos..]
                    .iter()
                    .position(|b| b.is_ascii_whitespace())
                    .map_or(bytes.len(), |e| pos + e);
                tokens.push(String::from_utf8_lossy(&bytes[pos..end]).into_owned());
                pos = end;
            }
        }
    }
    if tokens[0] != "P5" {
        let mut found = [0u8; 4];
        for (f, b) in found.iter_mut().zip(tokens[0].bytes()) {
            *f = b;
        }
        return Err(FormatError::BadMagic {
            expected: *b"P5\0\0",
            found,
        });
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| FormatError::Malformed(format!("bad PGM header field {s:?}")));
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(FormatError::Malformed(format!("maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let left = bytes.len().saturating_sub(pos);
    if left < n {
        return Err(FormatError::Truncated {
            offset: pos.min(bytes.len()),
            needed: n - left,
        });
    }
    if left > n {
        return Err(FormatError::Trailing(left - n));
    }
    Ok(Pgm {
        width,
        height,
        pixels: bytes[pos..].to_vec(),
        range,
    })
}

pub fn read_pgm(path: &Path) -> Result<Pgm, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode(&bytes)
}
