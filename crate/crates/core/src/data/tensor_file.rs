//! `.zft`: `"ZFT1"`, dtype `u8` (0 = f32), ndim `u8`, two zero bytes, `ndim`
//! `u32` dimensions, then the values little-endian.

use std::path::Path;

use crate::bytes::ByteReader;
use crate::error::{Error, Result};
use crate::tensor::{f32s_to_le_bytes, Tensor};

const MAGIC: &[u8; 4] = b"ZFT1";
const DTYPE_F32: u8 = 0;

pub fn tensor_to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    if !t.is_finite() {
        return Err(Error::NonFinite("tensor file values".into()));
    }
    if t.shape().len() > u8::MAX as usize || t.shape().iter().any(|&d| d > u32::MAX as usize) {
        return Err(Error::Shape(format!("shape {:?} cannot be stored", t.shape())));
    }
    let mut out = Vec::with_capacity(8 + 4 * t.shape().len() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F32);
    out.push(t.shape().len() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend(f32s_to_le_bytes(t.data()));
    Ok(out)
}

pub fn tensor_from_bytes(buf: &[u8]) -> Result<Tensor> {
    let mut r = ByteReader::new(buf, "zft");
    if r.take(4)? != MAGIC {
        return Err(Error::format("zft", "bad magic"));
    }
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::format("zft", format!("unsupported dtype {dtype}")));
    }
    let ndim = r.u8()? as usize;
    if ndim == 0 {
        return Err(Error::format("zft", "zero dimensions"));
    }
    if r.take(2)? != [0, 0] {
        return Err(Error::format("zft", "reserved bytes must be zero"));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut count: u64 = 1;
    for _ in 0..ndim {
        let d = r.u32()?;
        if d == 0 {
            return Err(Error::format("zft", "zero-length dimension"));
        }
        count = count
            .checked_mul(d as u64)
            .ok_or_else(|| Error::format("zft", "element count overflows"))?;
        shape.push(d as usize);
    }
    let data = r.f32s(count)?;
    r.finish()?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("zft", "non-finite value"));
    }
    Tensor::new(shape, data)
}

/// Refuses tensors holding NaN or infinities.
pub fn write_tensor_file(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = tensor_to_bytes(t)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    tensor_from_bytes(&buf)
}
