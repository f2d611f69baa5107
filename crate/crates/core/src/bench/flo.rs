//! Middlebury `.flo`: little-endian f32 magic, i32 width and height, then
//! row-major interleaved f32 `(u, v)` pairs.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::IoFormatError;
use crate::grid::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_BYTES: usize = 12;

pub fn write_flo_to<W: Write>(mut w: W, flow: &FlowField) -> Result<(), IoFormatError> {
    let (width, height) = flow.dims();
    let mut buf = Vec::with_capacity(HEADER_BYTES + 8 * flow.len());
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(width as i32).to_le_bytes());
    buf.extend_from_slice(&(height as i32).to_le_bytes());
    for v in flow.values() {
        buf.extend_from_slice(&(v[0] as f32).to_le_bytes());
        buf.extend_from_slice(&(v[1] as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<(), IoFormatError> {
    let mut out = Vec::new();
    write_flo_to(&mut out, flow)?;
    fs::write(path, out)?;
    Ok(())
}

fn f32_at(bytes: &[u8], offset: usize) -> f32 {
    f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn i32_at(bytes: &[u8], offset: usize) -> i32 {
    i32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn read_flo_from<R: Read>(mut r: R) -> Result<FlowField, IoFormatError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_BYTES {
        return Err(IoFormatError::Truncated {
            expected: HEADER_BYTES,
            actual: bytes.len(),
        });
    }
    let magic = f32_at(&bytes, 0);
    if magic != FLO_MAGIC {
        return Err(IoFormatError::BadMagic(magic));
    }
    let (w, h) = (i32_at(&bytes, 4), i32_at(&bytes, 8));
    if w <= 0 || h <= 0 {
        return Err(IoFormatError::BadDimensions {
            width: w as i64,
            height: h as i64,
        });
    }
    let (w, h) = (w as usize, h as usize);
    let expected = HEADER_BYTES + 8 * w * h;
    if bytes.len() < expected {
        return Err(IoFormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes[HEADER_BYTES..expected]
        .chunks_exact(8)
        .map(|c| [f32_at(c, 0) as f64, f32_at(c, 4) as f64])
        .collect();
    FlowField::new(w, h, data).map_err(|_| IoFormatError::NonFinite)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField, IoFormatError> {
    read_flo_from(fs::File::open(path)?)
}
