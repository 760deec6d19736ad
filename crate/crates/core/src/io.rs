//! Image file formats.
//!
//! * `DGF1` raw float: 16-byte header (`b"DGF1"`, width u32 LE, height u32 LE,
//!   dtype u32 LE) followed by row-major samples, little endian. Dtype `1` is
//!   32-bit IEEE float; dtype `2` (64-bit float) is accepted as well.
//! * 16-bit binary PGM (`P5`, maxval 65535, big-endian samples). Values are
//!   clamped to `[0, 1]` and rounded half-up on write.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image2D;

pub const DGF1_MAGIC: &[u8; 4] = b"DGF1";
const DGF1_HEADER: usize = 16;
/// Images larger than this many pixels are rejected while reading.
const MAX_PIXELS: u64 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawDtype {
    F32 = 1,
    F64 = 2,
}

impl RawDtype {
    fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(RawDtype::F32),
            2 => Some(RawDtype::F64),
            _ => None,
        }
    }

    fn sample_bytes(self) -> usize {
        match self {
            RawDtype::F32 => 4,
            RawDtype::F64 => 8,
        }
    }
}

pub fn encode_dgf1(image: &Image2D, dtype: RawDtype) -> Result<Vec<u8>> {
    let w = u32::try_from(image.width()).map_err(|_| Error::contract("width exceeds u32"))?;
    let h = u32::try_from(image.height()).map_err(|_| Error::contract("height exceeds u32"))?;
    let mut out = Vec::with_capacity(DGF1_HEADER + image.len() * dtype.sample_bytes());
    out.extend_from_slice(DGF1_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&(dtype as u32).to_le_bytes());
    match dtype {
        RawDtype::F32 => {
            for (i, &v) in image.pixels().iter().enumerate() {
                let s = v as f32;
                if !s.is_finite() {
                    return Err(Error::contract(format!(
                        "pixel {i} ({v}) not representable as a finite f32"
                    )));
                }
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        RawDtype::F64 => {
            for &v in image.pixels() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_dgf1(bytes: &[u8]) -> Result<Image2D> {
    if bytes.len() < DGF1_HEADER {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated DGF1 header ({} of {DGF1_HEADER} bytes)", bytes.len()),
        ));
    }
    if &bytes[..4] != DGF1_MAGIC {
        return Err(Error::format(0, "bad magic, expected `DGF1`"));
    }
    let width = le_u32(bytes, 4) as u64;
    let height = le_u32(bytes, 8) as u64;
    if width == 0 || height == 0 {
        return Err(Error::format(4, format!("zero dimension {width}x{height}")));
    }
    if width * height > MAX_PIXELS {
        return Err(Error::format(4, format!("dimensions {width}x{height} too large")));
    }
    let dtype = RawDtype::from_code(le_u32(bytes, 12))
        .ok_or_else(|| Error::format(12, format!("unknown dtype code {}", le_u32(bytes, 12))))?;
    let n = (width * height) as usize;
    let need = DGF1_HEADER + n * dtype.sample_bytes();
    if bytes.len() < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload, expected {need} bytes"),
        ));
    }
    if bytes.len() > need {
        return Err(Error::format(need as u64, "trailing bytes after payload"));
    }
    let payload = &bytes[DGF1_HEADER..];
    let mut pixels = Vec::with_capacity(n);
    for i in 0..n {
        let v = match dtype {
            RawDtype::F32 => f32::from_le_bytes(payload[i * 4..i * 4 + 4].try_into().unwrap()) as f64,
            RawDtype::F64 => f64::from_le_bytes(payload[i * 8..i * 8 + 8].try_into().unwrap()),
        };
        if !v.is_finite() {
            let offset = DGF1_HEADER + i * dtype.sample_bytes();
            return Err(Error::format(offset as u64, "non-finite sample"));
        }
        pixels.push(v);
    }
    Ok(Image2D::from_vec_unchecked(width as usize, height as usize, pixels))
}

/// Quantizes `[0, 1]` to 16 bits, round half up.
pub fn quantize_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0 + 0.5).floor() as u16
}

pub fn encode_pgm16(image: &Image2D) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", image.width(), image.height()).into_bytes();
    out.reserve(image.len() * 2);
    for &v in image.pixels() {
        out.extend_from_slice(&quantize_u16(v).to_be_bytes());
    }
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, format!("expected PGM {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse::<u64>()
            .map_err(|_| Error::format(start as u64, format!("PGM {what} out of range")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image2D> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(0, "bad magic, expected `P5`"));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 || width * height > MAX_PIXELS {
        return Err(Error::format(2, format!("invalid dimensions {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(maxval_at as u64, format!("invalid maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::format(cur.pos as u64, "missing whitespace after maxval"));
    }
    let start = cur.pos + 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let n = (width * height) as usize;
    let need = start + n * bps;
    if bytes.len() < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated PGM raster, expected {need} bytes"),
        ));
    }
    let scale = maxval as f64;
    let raster = &bytes[start..need];
    let pixels = (0..n)
        .map(|i| {
            let s = if bps == 1 {
                raster[i] as u64
            } else {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u64
            };
            s.min(maxval) as f64 / scale
        })
        .collect();
    Ok(Image2D::from_vec_unchecked(width as usize, height as usize, pixels))
}

fn is_pgm_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Reads a DGF1 or PGM file, chosen by its leading magic bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else {
        decode_dgf1(&bytes)
    }
}

/// Writes PGM for `.pgm` paths and 32-bit DGF1 otherwise.
pub fn write_image(image: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_pgm_path(path) {
        encode_pgm16(image)
    } else {
        encode_dgf1(image, RawDtype::F32)?
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a DGF1 file with an explicit sample type.
pub fn write_dgf1(image: &Image2D, path: impl AsRef<Path>, dtype: RawDtype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_dgf1(image, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_quantizes_to_32768() {
        assert_eq!(quantize_u16(0.5), 32768);
        let bytes = encode_pgm16(&Image2D::filled(3, 2, 0.5));
        let header = b"P5\n3 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        for s in bytes[header.len()..].chunks(2) {
            assert_eq!(u16::from_be_bytes([s[0], s[1]]), 32768);
        }
    }

    #[test]
    fn magic_mismatch_is_rejected_at_offset_zero() {
        let mut bytes = encode_dgf1(&Image2D::zeros(2, 2), RawDtype::F32).unwrap();
        bytes[0] = b'X';
        match decode_dgf1(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n0"), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_payload_reports_length() {
        let bytes = encode_dgf1(&Image2D::zeros(4, 4), RawDtype::F32).unwrap();
        match decode_dgf1(&bytes[..30]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 30),
            other => panic!("unexpected {other:?}"),
        }
        let pgm = encode_pgm16(&Image2D::zeros(4, 4));
        assert!(decode_pgm(&pgm[..pgm.len() - 1]).is_err());
    }

    #[test]
    fn header_dimension_overflow() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(DGF1_MAGIC);
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        assert!(matches!(decode_dgf1(&bytes), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn pgm_with_comment_and_8bit_raster() {
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn f64_dtype_is_lossless() {
        let img = Image2D::from_fn(5, 3, |x, y| (x as f64).sin() + y as f64 * 1e-9);
        let back = decode_dgf1(&encode_dgf1(&img, RawDtype::F64).unwrap()).unwrap();
        assert_eq!(back, img);
    }
}
