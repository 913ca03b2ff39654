//! Binary PPM (P6, maxval 255) reading and writing.

use std::path::Path;

use gsm_forge_core::codec::Image;
use gsm_forge_core::Tensor;

use crate::error::{HarnessError, Result};

/// Decoded RGB/8 raster before conversion to an [`Image`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB bytes, row-major.
    pub pixels: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                _ => break,
            }
        }
    }

    /// Returns the value and the offset it started at.
    fn number(&mut self, what: &str) -> std::result::Result<(usize, u64), (u64, String)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            let reason = if self.pos >= self.bytes.len() {
                format!("truncated header: missing {what}")
            } else {
                format!("expected {what}")
            };
            return Err((start as u64, reason));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map(|v| (v, start as u64))
            .ok_or((start as u64, format!("{what} out of range")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Raster, (u64, String)> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err((0, "bad magic (expected P6)".into()));
    }
    let mut c = Cursor { bytes, pos: 2 };
    let (width, _) = c.number("width")?;
    let (height, _) = c.number("height")?;
    let (maxval, max_at) = c.number("maxval")?;
    if maxval != 255 {
        return Err((max_at, format!("unsupported maxval {maxval} (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err((max_at, "zero image dimension".into()));
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        Some(_) => return Err((c.pos as u64, "expected whitespace after maxval".into())),
        None => return Err((c.pos as u64, "truncated header".into())),
    }
    let need = width * height * 3;
    let data = &bytes[c.pos..];
    if data.len() < need {
        return Err(((c.pos + data.len()) as u64, format!("truncated raster: {} of {need} bytes", data.len())));
    }
    if data.len() > need {
        return Err(((c.pos + need) as u64, "trailing bytes after raster".into()));
    }
    Ok(Raster { width, height, pixels: data.to_vec() })
}

pub fn encode_ppm(r: &Raster) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", r.width, r.height).into_bytes();
    out.extend_from_slice(&r.pixels);
    out
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(HarnessError::io(path))?;
    decode_ppm(&bytes).map_err(|(offset, reason)| HarnessError::Ppm { path: path.into(), offset, reason })
}

pub fn write_raster(r: &Raster, path: &Path) -> Result<()> {
    std::fs::write(path, encode_ppm(r)).map_err(HarnessError::io(path))
}

/// Planar `[3, H, W]` in `[0, 1]` from interleaved bytes via `v / 255`.
/// Dimensions need not be divisible by 4 here; crop before building codec inputs.
pub fn raster_to_planar(r: &Raster) -> Vec<f64> {
    let plane = r.width * r.height;
    let mut out = vec![0.0; 3 * plane];
    for (i, px) in r.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    out
}

pub fn image_to_raster(img: &Image) -> Raster {
    let (h, w) = (img.height(), img.width());
    let plane = h * w;
    let d = img.data();
    let mut pixels = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            pixels.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Raster { width: w, height: h, pixels }
}

pub fn raster_to_image(r: &Raster) -> Result<Image> {
    let t = Tensor::new(&[3, r.height, r.width], raster_to_planar(r))?;
    Ok(Image::new(t)?)
}

pub fn load_image(path: &Path) -> Result<Image> {
    raster_to_image(&read_raster(path)?)
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    write_raster(&image_to_raster(img), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn maps_bytes_to_unit_range() {
        let r = Raster { width: 2, height: 2, pixels: vec![0, 128, 255, 1, 2, 3, 4, 5, 6, 7, 8, 9] };
        let p = raster_to_planar(&r);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[4], 128.0 / 255.0);
        assert_eq!(p[8], 1.0);
    }

    #[test]
    fn header_with_comments() {
        let mut bytes = b"P6 # made by hand\n2 1\n# max\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let r = decode_ppm(&bytes).unwrap();
        assert_eq!((r.width, r.height), (2, 1));
        assert_eq!(r.pixels, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn rejections_carry_offsets() {
        assert_eq!(decode_ppm(b"P5\n1 1\n255\n\0").unwrap_err().0, 0);
        let (off, msg) = decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap_err();
        assert_eq!(off, 7);
        assert!(msg.contains("65535"));
        let (off, msg) = decode_ppm(b"P6\n2 2\n255\n\x01\x02").unwrap_err();
        assert_eq!(off, 13);
        assert!(msg.contains("truncated"));
        assert!(decode_ppm(b"P6\n2").unwrap_err().1.contains("truncated"));
        assert!(decode_ppm(b"P6\n1 1\n255\n\0\0\0\0").unwrap_err().1.contains("trailing"));
    }

    #[test]
    fn image_roundtrip_within_quantization() {
        let img = Image::new(Tensor::from_fn(&[3, 4, 4], |i| (i as f64 * 0.37).fract())).unwrap();
        let back = raster_to_image(&image_to_raster(&img)).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn save_load_is_byte_identical(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let pixels: Vec<u8> = (0..w * h * 3).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 13) as u8).collect();
            let r = Raster { width: w, height: h, pixels };
            let bytes = encode_ppm(&r);
            let back = decode_ppm(&bytes).unwrap();
            prop_assert_eq!(encode_ppm(&back), bytes);
        }
    }
}
