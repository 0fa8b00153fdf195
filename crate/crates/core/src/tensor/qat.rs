//! `.qat` tensor container: `"QAPT"`, u32 LE rank (always 4), four u32 LE
//! extents, then `N*C*H*W` f32 LE values. No padding, no checksum.

use std::fs;
use std::path::Path;

use super::{Shape, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QAPT";
const HEADER_LEN: usize = 4 + 4 + 16;

pub fn encoded_len(shape: Shape) -> usize {
    HEADER_LEN + 4 * shape.numel()
}

pub fn encode(t: &Tensor<f32>, out: &mut Vec<u8>) {
    out.reserve(encoded_len(t.shape()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&4u32.to_le_bytes());
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| {
            Error::parse(
                at,
                format!(
                    "header truncated: need {} bytes, have {}",
                    at + 4,
                    bytes.len()
                ),
            )
        })
}

/// Decode one tensor from the front of `bytes`; returns it and the number of
/// bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Tensor<f32>, usize)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::parse(0, "missing QAPT magic"));
    }
    let rank = read_u32(bytes, 4)?;
    if rank != 4 {
        return Err(Error::parse(4, format!("rank must be 4, found {rank}")));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let at = 8 + 4 * i;
        *d = read_u32(bytes, at)? as usize;
        if *d == 0 {
            return Err(Error::parse(at, "zero extent"));
        }
    }
    let shape = Shape::from(dims);
    let need = encoded_len(shape);
    if bytes.len() < need {
        return Err(Error::parse(
            bytes.len(),
            format!(
                "payload truncated: expected {} data bytes, found {}",
                need - HEADER_LEN,
                bytes.len() - HEADER_LEN
            ),
        ));
    }
    let data = bytes[HEADER_LEN..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Tensor::new(shape, data)?, need))
}

pub fn save(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    encode(t, &mut buf);
    fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let (t, used) = decode(&bytes)?;
    if used != bytes.len() {
        return Err(Error::parse(
            used,
            format!("{} trailing bytes", bytes.len() - used),
        ));
    }
    Ok(t)
}
