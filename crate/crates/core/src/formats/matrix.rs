//! GMX1 dense `f64` arrays used as raw loss inputs.
//!
//! Layout: magic, `u32` rank, `rank × u32` dims, then row-major little-endian `f64`.

use ndarray::{ArrayD, IxDyn};

use super::Cursor;
use crate::{Error, Result};

pub const MAGIC: &str = "GMX1";

pub fn to_bytes(array: &ArrayD<f64>) -> Vec<u8> {
    let mut out = MAGIC.as_bytes().to_vec();
    out.extend_from_slice(&(array.ndim() as u32).to_le_bytes());
    for &d in array.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in array.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ArrayD<f64>> {
    let mut c = Cursor::new(bytes);
    c.magic(MAGIC)?;
    let rank = c.u32("rank")? as usize;
    if rank > 8 {
        return Err(Error::Header(format!("rank {rank} exceeds 8")));
    }
    let dims = (0..rank)
        .map(|_| Ok(c.u32("dims")? as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = dims.iter().product();
    let data: Vec<f64> = c
        .take(n * 8, "data")?
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    c.finish()?;
    Ok(ArrayD::from_shape_vec(IxDyn(&dims), data).expect("length checked"))
}
