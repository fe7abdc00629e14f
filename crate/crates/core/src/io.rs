//! `VOL3` / `DSP3` binary formats: 4-byte magic, `nx ny nz` as little-endian
//! `u32`, then little-endian `f32` samples, x-fastest. Displacements store
//! three components per voxel, component-innermost.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Dims, DispField, Volume};
use crate::scalar::Real;

pub const VOL3_MAGIC: &[u8; 4] = b"VOL3";
pub const DSP3_MAGIC: &[u8; 4] = b"DSP3";

fn encode<T: Real>(magic: &[u8; 4], dims: Dims, values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * values.len());
    out.extend_from_slice(magic);
    for d in dims.as_array() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    out
}

fn decode<T: Real>(bytes: &[u8], magic: &[u8; 4], per_voxel: usize, what: &'static str) -> Result<(Dims, Vec<T>)> {
    if bytes.len() < 16 {
        return Err(Error::Truncated(what));
    }
    if &bytes[..4] != magic {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let dims = Dims::new(word(0), word(1), word(2));
    let count = dims
        .nx
        .checked_mul(dims.ny)
        .and_then(|n| n.checked_mul(dims.nz))
        .and_then(|n| n.checked_mul(per_voxel))
        .ok_or_else(|| Error::InvalidParameter(format!("{what} dims overflow: {dims}")))?;
    let payload = &bytes[16..];
    if payload.len() != 4 * count {
        return Err(if payload.len() < 4 * count {
            Error::Truncated(what)
        } else {
            Error::Length { expected: count, found: payload.len() / 4 }
        });
    }
    let values = payload.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
    Ok((dims, values))
}

pub fn write_volume<T: Real, W: Write>(mut w: W, vol: &Volume<T>) -> Result<()> {
    w.write_all(&encode(VOL3_MAGIC, vol.dims(), vol.data()))?;
    Ok(())
}

pub fn read_volume<T: Real, R: Read>(mut r: R) -> Result<Volume<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (dims, data) = decode(&bytes, VOL3_MAGIC, 1, "VOL3")?;
    Volume::new(dims, data)
}

pub fn write_field<T: Real, W: Write>(mut w: W, u: &DispField<T>) -> Result<()> {
    w.write_all(&encode(DSP3_MAGIC, u.dims(), u.data()))?;
    Ok(())
}

pub fn read_field<T: Real, R: Read>(mut r: R) -> Result<DispField<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (dims, data) = decode(&bytes, DSP3_MAGIC, 3, "DSP3")?;
    DispField::new(dims, data)
}

pub fn save_volume<T: Real>(path: impl AsRef<Path>, vol: &Volume<T>) -> Result<()> {
    write_volume(fs::File::create(path)?, vol)
}

pub fn load_volume<T: Real>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    read_volume(fs::File::open(path)?)
}

pub fn save_field<T: Real>(path: impl AsRef<Path>, u: &DispField<T>) -> Result<()> {
    write_field(fs::File::create(path)?, u)
}

pub fn load_field<T: Real>(path: impl AsRef<Path>) -> Result<DispField<T>> {
    read_field(fs::File::open(path)?)
}
