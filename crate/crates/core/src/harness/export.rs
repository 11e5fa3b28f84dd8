//! Ensemble and noise exports.
//!
//! Ensemble layout (little-endian): magic `SHEENS01`, the 64-byte hex
//! manifest hash, then `u64` mode (1 terminal, 2 full), dimension, modes per
//! axis, path count and blow-up count. Each blow-up is `u64` path id, step and
//! mode plus the `f64` value. In terminal mode each path is a `u64` id, the
//! `f64` time and `N^d` coefficients; in full mode each path is a `SHESNAP1`
//! snapshot stream.
//!
//! Noise layout: magic `SHENOIS1`, `u64` path count, then per path a `u64`
//! byte length followed by a `SHEWIEN1` dump of that length.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::WienerPath;
use crate::solver::{self, BlowUpRecord, Ensemble, SolutionPath};

use super::ExperimentManifest;

const ENSEMBLE_MAGIC: &[u8; 8] = b"SHEENS01";
const NOISE_MAGIC: &[u8; 8] = b"SHENOIS1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportMode {
    None,
    /// Final-time coefficients of every path.
    #[default]
    Terminal,
    /// Every recorded snapshot of every path.
    Full,
}

/// Contents of an ensemble export.
#[derive(Clone, Debug)]
pub struct EnsembleExport {
    pub manifest_hash: String,
    pub mode: ExportMode,
    pub dim: usize,
    pub modes: usize,
    pub blowups: Vec<BlowUpRecord>,
    /// `(path id, time, coefficients)` at the final time.
    pub terminal: Vec<(u64, f64, Vec<f64>)>,
    /// Full paths; empty in terminal mode.
    pub paths: Vec<SolutionPath>,
}

fn put(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_ensemble(e: &Ensemble, mode: ExportMode, manifest_hash: &str, mut w: impl Write) -> Result<()> {
    let code = match mode {
        ExportMode::None => return Err(Error::Domain("nothing to export in mode none".into())),
        ExportMode::Terminal => 1,
        ExportMode::Full => 2,
    };
    if manifest_hash.len() != 64 || !manifest_hash.is_ascii() {
        return Err(Error::Format("manifest hash must be 64 hex digits".into()));
    }
    w.write_all(ENSEMBLE_MAGIC)?;
    w.write_all(manifest_hash.as_bytes())?;
    for v in [
        code,
        e.config.dim as u64,
        e.config.modes as u64,
        e.paths.len() as u64,
        e.blowups.len() as u64,
    ] {
        put(&mut w, v)?;
    }
    for b in &e.blowups {
        for v in [b.path_id, b.step as u64, b.mode as u64, b.value.to_bits()] {
            put(&mut w, v)?;
        }
    }
    for p in &e.paths {
        if mode == ExportMode::Full {
            solver::write_snapshots(p, &mut w)?;
        } else {
            put(&mut w, p.path_id())?;
            put(&mut w, p.times()[p.len() - 1].to_bits())?;
            for c in p.terminal() {
                put(&mut w, c.to_bits())?;
            }
        }
    }
    Ok(())
}

pub fn read_ensemble(mut r: impl Read) -> Result<EnsembleExport> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != ENSEMBLE_MAGIC {
        return Err(Error::Format("not an ensemble export".into()));
    }
    let mut hash = [0u8; 64];
    r.read_exact(&mut hash)?;
    let manifest_hash = String::from_utf8(hash.to_vec()).map_err(|_| Error::Format("corrupt manifest hash".into()))?;
    let mode = match get(&mut r)? {
        1 => ExportMode::Terminal,
        2 => ExportMode::Full,
        m => return Err(Error::Format(format!("unknown export mode {m}"))),
    };
    let dim = get(&mut r)? as usize;
    let modes = get(&mut r)? as usize;
    let count = get(&mut r)? as usize;
    let failed = get(&mut r)? as usize;
    if !(dim == 1 || dim == 2) || modes == 0 {
        return Err(Error::Format("corrupt ensemble header".into()));
    }
    let mut blowups = Vec::with_capacity(failed.min(1 << 20));
    for _ in 0..failed {
        blowups.push(BlowUpRecord {
            path_id: get(&mut r)?,
            step: get(&mut r)? as usize,
            mode: get(&mut r)? as usize,
            value: f64::from_bits(get(&mut r)?),
        });
    }
    let width = modes.pow(dim as u32);
    let mut terminal = Vec::new();
    let mut paths = Vec::new();
    for _ in 0..count {
        if mode == ExportMode::Full {
            let p = solver::read_snapshots(&mut r)?;
            if p.basis().dim() != dim || p.basis().modes_per_axis() != modes {
                return Err(Error::Format("snapshot stream does not match the ensemble header".into()));
            }
            terminal.push((p.path_id(), p.times()[p.len() - 1], p.terminal().to_vec()));
            paths.push(p);
        } else {
            let id = get(&mut r)?;
            let t = f64::from_bits(get(&mut r)?);
            let c = (0..width).map(|_| get(&mut r).map(f64::from_bits)).collect::<Result<_>>()?;
            terminal.push((id, t, c));
        }
    }
    Ok(EnsembleExport {
        manifest_hash,
        mode,
        dim,
        modes,
        blowups,
        terminal,
        paths,
    })
}

/// Dumps the increments that drove every path of the primary ensemble.
pub(crate) fn write_noise(m: &ExperimentManifest, e: &Ensemble, mut w: impl Write) -> Result<()> {
    let ids: Vec<u64> = e.paths.iter().map(|p| p.path_id()).collect();
    w.write_all(NOISE_MAGIC)?;
    put(&mut w, ids.len() as u64)?;
    let mut buf = Vec::new();
    for id in ids {
        buf.clear();
        solver::wiener_path(&m.sim, &m.noise, id)?.write_to(&mut buf)?;
        put(&mut w, buf.len() as u64)?;
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_noise(mut r: impl Read) -> Result<Vec<WienerPath>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != NOISE_MAGIC {
        return Err(Error::Format("not a noise dump".into()));
    }
    let count = get(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = get(&mut r)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        out.push(WienerPath::read_from(&buf[..])?);
    }
    Ok(out)
}
