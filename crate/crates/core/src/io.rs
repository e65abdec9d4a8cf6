//! Binary PGM images and the RFT1 tensor container.
//!
//! RFT1 layout: `b"RFT1"`, one rank byte, `rank` little-endian u64 extents,
//! then the values as little-endian f32.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::image::{Image, Tensor};

const RFT_MAGIC: &[u8; 4] = b"RFT1";

pub fn encode_pgm(img: &Image) -> Result<Vec<u8>> {
    img.require_gray()?;
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Maps `[0, 1]` to a byte, rounding half away from zero.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|reason| Error::format(path, reason))
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or("missing magic")?;
    if magic != b"P5" {
        return Err(format!("expected P5 magic, found {:?}", String::from_utf8_lossy(magic)));
    }
    let mut fields = [0usize; 3];
    for (slot, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| format!("missing {name}"))?;
        *slot = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("invalid {name}"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported (only 255)"));
    }
    if width == 0 || height == 0 {
        return Err("zero dimension".into());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| format!("truncated raster: need {n} bytes"))?;
    let data = raster.iter().map(|&b| b as f64 / 255.0).collect();
    Image::gray(height, width, data).map_err(|e| e.to_string())
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let rank = t.shape().len();
    if rank == 0 || rank > u8::MAX as usize {
        return Err(invalid!("tensor rank {rank} cannot be stored"));
    }
    let mut out = Vec::with_capacity(5 + rank * 8 + t.len() * 4);
    out.extend_from_slice(RFT_MAGIC);
    out.push(rank as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    if bytes.len() < 5 || &bytes[..4] != RFT_MAGIC {
        return Err("bad magic".into());
    }
    let rank = bytes[4] as usize;
    if rank == 0 {
        return Err("rank 0 tensors are not allowed".into());
    }
    let header = 5 + rank * 8;
    if bytes.len() < header {
        return Err("truncated shape".into());
    }
    let shape: Vec<usize> = bytes[5..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("extent overflow")?;
    let payload = &bytes[header..];
    if payload.len() != n * 4 {
        return Err(format!("payload is {} bytes, expected {}", payload.len(), n * 4));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::from_vec(shape, data).map_err(|e| e.to_string())
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|reason| Error::format(path, reason))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn create_dir(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
