//! Little-endian snapshot stream of one path.
//!
//! Layout: the 8-byte magic `SHESNAP1`, then `u64` path id, dimension, modes
//! per axis, record stride and record count, then the `f64` time step. Each
//! record is an `f64` time followed by the `N^d` coefficients.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::spectral::EigenSystem;

use super::SolutionPath;

const MAGIC: &[u8; 8] = b"SHESNAP1";

pub fn write_snapshots(path: &SolutionPath, mut w: impl Write) -> Result<()> {
    let b = path.basis();
    w.write_all(MAGIC)?;
    for v in [
        path.path_id(),
        b.dim() as u64,
        b.modes_per_axis() as u64,
        path.stride() as u64,
        path.len() as u64,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&path.dt().to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * (1 + b.len()));
    for (t, s) in path.times().iter().zip(path.states()) {
        buf.clear();
        buf.extend_from_slice(&t.to_le_bytes());
        for c in s {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_snapshots(mut r: impl Read) -> Result<SolutionPath> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    if &word != MAGIC {
        return Err(Error::Format("not a snapshot stream".into()));
    }
    let mut header = [0u64; 6];
    for h in header.iter_mut() {
        r.read_exact(&mut word)?;
        *h = u64::from_le_bytes(word);
    }
    let [path_id, dim, modes, stride, count, dt_bits] = header;
    let basis = EigenSystem::shared(dim as usize, modes as usize)
        .map_err(|e| Error::Format(format!("corrupt snapshot header: {e}")))?;
    let width = basis.len();
    let mut states = Vec::with_capacity(count as usize);
    let mut rec = vec![0u8; 8 * (1 + width)];
    for _ in 0..count {
        r.read_exact(&mut rec)?;
        states.push(
            rec[8..]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    SolutionPath::from_states(basis, path_id, f64::from_bits(dt_bits), stride as usize, states)
}
