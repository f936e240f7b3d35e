//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// A decoded netpbm header plus the offset of the first pixel byte.
#[derive(Debug, PartialEq, Eq)]
struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> std::result::Result<Header, String> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format!(
            "malformed header: expected magic {}",
            String::from_utf8_lossy(magic)
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let name = ["width", "height", "maxval"][k];
        if start == pos {
            return Err(format!("malformed header: missing {name}"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("malformed header: {name} out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("malformed header: expected whitespace after maxval".into()),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format!("malformed header: empty image {width}x{height}"));
    }
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, only 255 is accepted"));
    }
    Ok(Header {
        width,
        height,
        data_start: pos,
    })
}

/// `[0, 1]` → byte, clamping first and rounding half up.
pub fn quantize(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (f64::from(v) * 255.0 + 0.5).floor() as u8
}

fn decode(bytes: &[u8], magic: &[u8; 2], channels: usize) -> std::result::Result<Tensor, String> {
    let h = parse_header(bytes, magic)?;
    let plane = h.width * h.height;
    let need = plane * channels;
    let data = &bytes[h.data_start..];
    if data.len() < need {
        return Err(format!("short pixel data: expected {need} bytes, got {}", data.len()));
    }
    let mut out = vec![0f32; need];
    for (i, px) in data[..need].chunks_exact(channels).enumerate() {
        for (c, &b) in px.iter().enumerate() {
            out[c * plane + i] = f32::from(b) / 255.0;
        }
    }
    Ok(Tensor::from_vec(Shape::new(1, channels, h.height, h.width), out))
}

fn encode(t: &Tensor, magic: &[u8; 2], channels: usize) -> Result<Vec<u8>> {
    let s = t.shape();
    if s.n != 1 {
        return Err(Error::shape("write_image", "batch", s.n, 1));
    }
    if s.c != channels {
        return Err(Error::shape("write_image", "channels", s.c, channels));
    }
    let mut out = format!("{}\n{} {}\n255\n", String::from_utf8_lossy(magic), s.w, s.h).into_bytes();
    let plane = s.plane();
    out.reserve(plane * channels);
    for i in 0..plane {
        for c in 0..channels {
            out.push(quantize(t.data()[c * plane + i]));
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    decode(bytes, b"P6", 3)
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    decode(bytes, b"P5", 1)
}

pub fn encode_ppm(t: &Tensor) -> Result<Vec<u8>> {
    encode(t, b"P6", 3)
}

pub fn encode_pgm(t: &Tensor) -> Result<Vec<u8>> {
    encode(t, b"P5", 1)
}

fn read_with(path: &Path, f: fn(&[u8]) -> std::result::Result<Tensor, String>) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    f(&bytes).map_err(|m| Error::format(path, m))
}

/// Read a P6 image as a `(1, 3, h, w)` tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    read_with(path, decode_ppm)
}

/// Write a `(1, 3, h, w)` tensor as P6. The file appears complete or not at all.
pub fn write_image(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &encode_ppm(t)?)
}

/// Read a P5 image as a `(1, 1, h, w)` tensor.
pub fn read_gray(path: &Path) -> Result<Tensor> {
    read_with(path, decode_pgm)
}

pub fn write_gray(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &encode_pgm(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pixel_image_maps_channels() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 0, 255]);
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 1, 2));
        assert_eq!(t.plane(0, 0), &[1.0, 0.0]);
        assert_eq!(t.plane(0, 1), &[0.0, 0.0]);
        assert_eq!(t.plane(0, 2), &[0.0, 1.0]);
        assert_eq!(encode_ppm(&t).unwrap(), bytes);
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
        for b in 0..=255u8 {
            assert_eq!(quantize(f32::from(b) / 255.0), b);
        }
    }

    #[test]
    fn comments_in_header() {
        let mut bytes = b"P5\n# made by hand\n3 # width\n1\n255\n".to_vec();
        bytes.extend([0, 51, 255]);
        let t = decode_pgm(&bytes).unwrap();
        assert_eq!(t.data(), &[0.0, 0.2, 1.0]);
    }

    #[test]
    fn errors_are_distinct() {
        let cases: [(&[u8], &str); 5] = [
            (b"P3\n1 1\n255\n", "malformed header"),
            (b"P6\n1\n", "missing height"),
            (b"P6\n1 1\n65535\n\0\0\0\0\0\0", "unsupported maxval 65535"),
            (b"P6\n2 2\n255\n\0\0\0", "short pixel data: expected 12 bytes, got 3"),
            (b"P6\n0 2\n255\n", "empty image"),
        ];
        for (bytes, needle) in cases {
            let err = decode_ppm(bytes).unwrap_err();
            assert!(err.contains(needle), "{err}");
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let data: Vec<f32> = (0..2 * 3 * 5).map(|i| i as f32 / 29.0).collect();
        let t = Tensor::new(1, 3, 2, 5, data);
        write_image(&path, &t).unwrap();
        let back = read_image(&path).unwrap();
        assert!(back.max_abs_diff(&t) <= 1.0 / 510.0 + 1e-7);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(encode_ppm(&back).unwrap(), bytes);
    }
}
