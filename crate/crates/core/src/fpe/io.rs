//! Grid snapshot formats.
//!
//! CSV is long format with header `x,p,W`, one line per cell in row-major
//! order. The binary dump is the magic `OTFP`, then `x_min, x_max, p_min,
//! p_max` as f64 and `nx, np` as u64, then `nx * np` f64 values row-major;
//! everything little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::table::fmt_sci;

use super::grid::{GridGeometry, PhaseSpaceGrid};

pub const MAGIC: &[u8; 4] = b"OTFP";

pub fn write_grid_csv<W: Write>(grid: &PhaseSpaceGrid, mut w: W) -> std::io::Result<()> {
    let g = grid.geometry;
    writeln!(w, "x,p,W")?;
    for ix in 0..g.nx {
        let x = fmt_sci(g.x_center(ix));
        for ip in 0..g.np {
            writeln!(w, "{x},{},{}", fmt_sci(g.p_center(ip)), fmt_sci(grid.at(ix, ip)))?;
        }
    }
    Ok(())
}

pub fn write_grid_binary<W: Write>(grid: &PhaseSpaceGrid, mut w: W) -> std::io::Result<()> {
    let g = grid.geometry;
    w.write_all(MAGIC)?;
    for v in [g.x_min, g.x_max, g.p_min, g.p_max] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(g.nx as u64).to_le_bytes())?;
    w.write_all(&(g.np as u64).to_le_bytes())?;
    let mut bytes = Vec::with_capacity(grid.values.len() * 8);
    for v in &grid.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

pub fn read_grid_binary<R: Read>(mut r: R) -> Result<PhaseSpaceGrid> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Grid(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 8];
    let mut f = [0.0; 4];
    for v in f.iter_mut() {
        r.read_exact(&mut word)?;
        *v = f64::from_le_bytes(word);
    }
    r.read_exact(&mut word)?;
    let nx = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let np = u64::from_le_bytes(word) as usize;
    let geometry = GridGeometry::new(f[0], f[1], f[2], f[3], nx, np)?;
    let mut bytes = vec![0u8; geometry.len() * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    PhaseSpaceGrid::from_values(geometry, values)
}
