//! `PXG1` tensor container: magic `PXG1`, little-endian `u32` rank, `rank`
//! little-endian `u32` dimensions, then row-major little-endian `f32` data.

use std::io::{Read, Write};

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const PXG_MAGIC: &[u8; 4] = b"PXG1";

pub fn write_pxg<T: Real, W: Write>(tensor: &Tensor<T>, mut out: W) -> Result<()> {
    out.write_all(PXG_MAGIC)?;
    out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(tensor.numel() * 4);
    for v in tensor.data() {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Encoded size in bytes of a tensor with the given shape.
pub fn pxg_len(shape: &[usize]) -> usize {
    8 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}

pub fn read_pxg<T: Real, R: Read>(mut input: R) -> Result<Tensor<T>> {
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    if &word != PXG_MAGIC {
        return Err(Error::format("PXG1 tensor", format!("bad magic {word:?}")));
    }
    input.read_exact(&mut word)?;
    let rank = u32::from_le_bytes(word) as usize;
    if rank == 0 || rank > 16 {
        return Err(Error::format("PXG1 tensor", format!("rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        input.read_exact(&mut word)?;
        shape.push(u32::from_le_bytes(word) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut bytes = vec![0u8; numel * 4];
    input.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::format("PXG1 tensor", e.to_string()))
}
