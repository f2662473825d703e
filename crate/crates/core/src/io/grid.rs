//! The `.sgrd` grid format: a magic string, the shape, and a flat payload.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..5   magic "SGRD1"
//! bytes 5..9   rank (u32)
//! then         rank x u32 dimension sizes
//! then         product(dims) x f32 values, row-major
//! ```
//!
//! Values are float-32 on disk and float-64 in memory, so a round trip is
//! exact at float-32 precision. Payloads are capped at 1 GiB; the size check
//! uses checked arithmetic so absurd dimensions fail cleanly instead of
//! overflowing. Parse errors report the byte offset of the problem.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"SGRD1";

/// Upper bound on the payload (dimension product x 4 bytes).
pub const MAX_PAYLOAD_BYTES: u64 = 1 << 30;

/// Serialise a tensor to the grid format.
pub fn save_grid(t: &Tensor) -> Result<Vec<u8>> {
    let payload_bytes = (t.len() as u64).checked_mul(4).filter(|&b| b <= MAX_PAYLOAD_BYTES);
    if payload_bytes.is_none() {
        return Err(Error::dim(format!(
            "grid payload of {} elements exceeds the 1 GiB limit",
            t.len()
        )));
    }
    let mut out = Vec::with_capacity(9 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        if d > u32::MAX as usize {
            return Err(Error::dim(format!("dimension {d} does not fit in 32 bits")));
        }
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parse one grid from the front of `bytes`; returns the tensor and the
/// number of bytes consumed. Used where grids are embedded in a container.
pub fn load_grid_prefix(bytes: &[u8]) -> Result<(Tensor, usize)> {
    let take = |offset: usize, len: usize| -> Result<&[u8]> {
        bytes.get(offset..offset + len).ok_or_else(|| {
            Error::format(
                bytes.len() as u64,
                format!("truncated: need {} bytes, have {}", offset + len, bytes.len()),
            )
        })
    };
    let magic = take(0, 5)?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let rank = u32::from_le_bytes(take(5, 4)?.try_into().expect("4 bytes")) as usize;
    let mut dims = Vec::with_capacity(rank.min(64));
    let mut elements: u64 = 1;
    for i in 0..rank {
        let offset = 9 + 4 * i;
        let d = u32::from_le_bytes(take(offset, 4)?.try_into().expect("4 bytes")) as u64;
        if d == 0 {
            return Err(Error::format(offset as u64, format!("axis {i} has zero extent")));
        }
        elements = elements.checked_mul(d).ok_or_else(|| {
            Error::format(offset as u64, "dimension product overflows".to_string())
        })?;
        if elements.checked_mul(4).is_none_or(|b| b > MAX_PAYLOAD_BYTES) {
            return Err(Error::format(
                offset as u64,
                format!("payload of {elements} elements exceeds the 1 GiB limit"),
            ));
        }
        dims.push(d as usize);
    }
    let payload_start = 9 + 4 * rank;
    let payload = take(payload_start, elements as usize * 4)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let t = Tensor::from_vec(dims, data)?;
    Ok((t, payload_start + elements as usize * 4))
}

/// Parse a grid that must span `bytes` exactly.
pub fn load_grid(bytes: &[u8]) -> Result<Tensor> {
    let (t, consumed) = load_grid_prefix(bytes)?;
    if consumed != bytes.len() {
        return Err(Error::format(
            consumed as u64,
            format!("{} trailing bytes after grid payload", bytes.len() - consumed),
        ));
    }
    Ok(t)
}

pub fn save_grid_file(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    std::fs::write(path, save_grid(t)?)?;
    Ok(())
}

pub fn load_grid_file(path: impl AsRef<Path>) -> Result<Tensor> {
    load_grid(&std::fs::read(path)?)
}
