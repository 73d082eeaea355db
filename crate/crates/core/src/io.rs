//! Binary field snapshots and PPM heatmaps.
//!
//! Snapshot layout (little endian): 32-byte header `"VCF1"`, `u32 m`,
//! `u32 n`, `u32` reserved (zero), `f64 h`, `f64 t`, then `m * n` `f64`
//! values in row-major order (`values[i * n + j]`, `i` along x).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"VCF1";
pub const SNAPSHOT_HEADER_LEN: usize = 32;

pub fn encode_snapshot(field: &ScalarField, t: f64) -> Vec<u8> {
    let g = field.grid();
    let mut buf = Vec::with_capacity(SNAPSHOT_HEADER_LEN + 8 * g.len());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&(g.m() as u32).to_le_bytes());
    buf.extend_from_slice(&(g.n() as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&g.h().to_le_bytes());
    buf.extend_from_slice(&t.to_le_bytes());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(ScalarField, f64)> {
    if bytes.len() < SNAPSHOT_HEADER_LEN {
        return Err(Error::Snapshot(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot(format!("bad magic {:?}", &bytes[..4])));
    }
    let u32_at = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4 bytes")) as usize;
    let f64_at = |k: usize| f64::from_le_bytes(bytes[k..k + 8].try_into().expect("8 bytes"));
    let (m, n) = (u32_at(4), u32_at(8));
    let (h, t) = (f64_at(16), f64_at(24));
    let expected = SNAPSHOT_HEADER_LEN + 8 * m * n;
    if bytes.len() != expected {
        return Err(Error::Snapshot(format!(
            "{m}x{n} snapshot needs {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let grid = Grid::new(m, n, h).map_err(|e| Error::Snapshot(e.to_string()))?;
    let values = bytes[SNAPSHOT_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((ScalarField::from_vec(grid, values)?, t))
}

pub fn write_snapshot(path: impl AsRef<Path>, field: &ScalarField, t: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_snapshot(field, t))?;
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<(ScalarField, f64)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_snapshot(&bytes)
}

/// Linear blue-white-red map over `[-1, 1]`; values outside are clamped.
pub fn colormap(v: f64) -> [u8; 3] {
    let s = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    let to_u8 = |x: f64| (255.0 * x).round() as u8;
    if s < 0.0 {
        let a = 1.0 + s;
        [to_u8(a), to_u8(a), 255]
    } else {
        let a = 1.0 - s;
        [255, to_u8(a), to_u8(a)]
    }
}

/// Binary P6 image with x to the right and y upward.
pub fn encode_ppm(field: &ScalarField) -> Vec<u8> {
    let g = field.grid();
    let (m, n) = (g.m(), g.n());
    let mut buf = format!("P6\n{m} {n}\n255\n").into_bytes();
    buf.reserve(3 * m * n);
    for j in (0..n).rev() {
        for i in 0..m {
            buf.extend_from_slice(&colormap(field.get(i, j)));
        }
    }
    buf
}

pub fn write_ppm(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_ppm(field))?;
    w.flush()?;
    Ok(())
}
