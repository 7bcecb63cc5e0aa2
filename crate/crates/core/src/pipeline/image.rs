//! Binary PPM (P6) and PGM (P5) files with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Mask;
use crate::scenegen::RgbImage;

/// `[-1, 1]` to `0..=255`.
pub fn signed_to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn byte_to_signed(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

/// `[0, 1]` to `0..=255`.
pub fn unit_to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| signed_to_byte(v)));
    out
}

pub fn encode_pgm(height: usize, width: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::Shape(format!("{} values for a {height}x{width} gray image", values.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| unit_to_byte(v)));
    Ok(out)
}

/// Splits a netpbm header of the given magic from its payload.
fn parse_header<'a>(bytes: &'a [u8], magic: &[u8; 2]) -> Result<(usize, usize, &'a [u8])> {
    let bad = |m: &str| Error::InvalidArgument(format!("netpbm: {m}"));
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad("wrong magic number"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
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
        *f = std::str::from_utf8(&bytes[start..pos]).ok().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad header"))?;
    }
    if fields[2] != 255 {
        return Err(bad("only 8-bit samples are supported"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("bad header"));
    }
    Ok((fields[0], fields[1], &bytes[pos + 1..]))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (width, height, data) = parse_header(bytes, b"P6")?;
    if data.len() != width * height * 3 {
        return Err(Error::InvalidArgument(format!("netpbm: {} bytes for {width}x{height} RGB", data.len())));
    }
    RgbImage::from_data(height, width, data.iter().map(|&b| byte_to_signed(b)).collect())
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Mask> {
    let (width, height, data) = parse_header(bytes, b"P5")?;
    if data.len() != width * height {
        return Err(Error::InvalidArgument(format!("netpbm: {} bytes for {width}x{height} gray", data.len())));
    }
    Ok(Mask { height, width, data: data.iter().map(|&b| b as f64 / 255.0).collect() })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_file(path, &encode_ppm(img))
}

pub fn write_pgm(path: &Path, height: usize, width: usize, values: &[f64]) -> Result<()> {
    write_file(path, &encode_pgm(height, width, values)?)
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_pgm(path: &Path) -> Result<Mask> {
    decode_pgm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
