//! On-disk raster formats.
//!
//! * `F32R`: magic `F32R`, then `H`, `W`, `k` as little-endian `u32`, then
//!   `H*W*k` little-endian `f32` values in row-major, channel-innermost order.
//! * Binary PPM (`P6`, maxval 255) for RGB images whose values live in `[-1, 1]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

const F32R_MAGIC: &[u8; 4] = b"F32R";

pub fn encode_f32r(shape: Shape, data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * data.len());
    out.extend_from_slice(F32R_MAGIC);
    for dim in [shape.height, shape.width, shape.channels] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_f32r(bytes: &[u8], path: &Path) -> Result<(Shape, Vec<f64>)> {
    if bytes.len() < 16 || &bytes[..4] != F32R_MAGIC {
        return Err(Error::format(path, "missing F32R header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = Shape::new(dim(0), dim(1), dim(2));
    let body = &bytes[16..];
    if body.len() != 4 * shape.len() {
        return Err(Error::format(
            path,
            format!("expected {} floats for {shape}, found {} bytes", shape.len(), body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((shape, data))
}

pub fn write_f32r(path: &Path, shape: Shape, data: &[f64]) -> Result<()> {
    write_bytes(path, &encode_f32r(shape, data))
}

pub fn write_tensor(path: &Path, tensor: &ImageTensor) -> Result<()> {
    write_f32r(path, tensor.shape(), tensor.data())
}

pub fn read_tensor(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (shape, data) = decode_f32r(&bytes, path)?;
    ImageTensor::from_vec(shape, data)
}

/// Rounds to the nearest `f32`, so values survive an `F32R` round trip unchanged.
pub fn to_f32_precision(v: f64) -> f64 {
    v as f32 as f64
}

/// Maps `[-1, 1]` to an 8-bit level.
pub fn rgb_level(v: f64) -> u8 {
    (((v + 1.0) * 0.5 * 255.0).round()).clamp(0.0, 255.0) as u8
}

pub fn level_to_rgb(q: u8) -> f64 {
    q as f64 / 255.0 * 2.0 - 1.0
}

/// Snaps a `[-1, 1]` value to the nearest 8-bit level.
pub fn quantize_rgb(v: f64) -> f64 {
    level_to_rgb(rgb_level(v))
}

pub fn write_ppm(path: &Path, rgb: &ImageTensor) -> Result<()> {
    if rgb.channels() != 3 {
        return Err(Error::shape("3 channels", rgb.channels()));
    }
    let mut out = format!("P6\n{} {}\n255\n", rgb.width(), rgb.height()).into_bytes();
    out.extend(rgb.data().iter().map(|&v| rgb_level(v)));
    write_bytes(path, &out)
}

pub fn read_ppm(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PPM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the pixels
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::format(path, format!("unsupported PPM magic {}", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad PPM header field `{s}`")))
    };
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::format(path, "only 8-bit PPM is supported"));
    }
    let shape = Shape::new(height, width, 3);
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != shape.len() {
        return Err(Error::format(path, "PPM pixel data length mismatch"));
    }
    ImageTensor::from_vec(shape, body.iter().map(|&q| level_to_rgb(q)).collect())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}
