//! Binary containers, field CSV files and PGM heatmaps.
//!
//! All binary containers share one layout: a 4-byte magic, a version byte,
//! then little-endian integers and row-major little-endian `f64` payloads.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{FieldVector, GridSpec};

const FLDV_MAGIC: &[u8; 4] = b"FLDV";
const FORMAT_VERSION: u8 = 1;

pub(crate) fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], version: u8) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&[version])?;
    Ok(())
}

pub(crate) fn read_header<R: Read>(r: &mut R, magic: &[u8; 4], version: u8) -> Result<()> {
    let mut buf = [0u8; 5];
    r.read_exact(&mut buf)?;
    if &buf[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    if buf[4] != version {
        return Err(Error::Format(format!("unsupported version {}", buf[4])));
    }
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes fields in the `FLDV` container: magic, version, `nx`, `ny`, field
/// count (u32 LE each), then each field row-major.
pub fn write_fields<W: Write>(w: &mut W, fields: &[&FieldVector]) -> Result<()> {
    let grid = fields
        .first()
        .map(|f| f.grid())
        .ok_or_else(|| Error::InvalidParameter("no fields to write".into()))?;
    write_header(w, FLDV_MAGIC, FORMAT_VERSION)?;
    w.write_all(&(grid.nx as u32).to_le_bytes())?;
    w.write_all(&(grid.ny as u32).to_le_bytes())?;
    w.write_all(&(fields.len() as u32).to_le_bytes())?;
    for f in fields {
        if f.grid() != grid {
            return Err(Error::InvalidParameter("fields on different grids".into()));
        }
        write_f64s(w, f.values())?;
    }
    Ok(())
}

pub fn read_fields<R: Read>(r: &mut R) -> Result<Vec<FieldVector>> {
    read_header(r, FLDV_MAGIC, FORMAT_VERSION)?;
    let nx = read_u32(r)? as usize;
    let ny = read_u32(r)? as usize;
    let count = read_u32(r)? as usize;
    let grid = GridSpec::new(nx, ny)?;
    (0..count)
        .map(|_| FieldVector::new(grid, read_f64s(r, grid.len())?))
        .collect()
}

/// Writes a field as CSV with header `i,j,value`, one row per cell.
pub fn write_field_csv<W: Write>(w: W, field: &FieldVector) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["i", "j", "value"])?;
    let g = field.grid();
    for i in 0..g.nx {
        for j in 0..g.ny {
            out.write_record(&[i.to_string(), j.to_string(), field.get(i, j).to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads an `i,j,value` CSV; the grid is inferred from the largest indices.
pub fn read_field_csv<R: Read>(r: R) -> Result<FieldVector> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse_err = |what: &str| Error::Format(format!("bad {what} in field CSV"));
        let i: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("i"))?;
        let j: usize = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("j"))?;
        let v: f64 = rec
            .get(2)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("value"))?;
        cells.push((i, j, v));
    }
    let nx = cells.iter().map(|c| c.0).max().map_or(0, |m| m + 1);
    let ny = cells.iter().map(|c| c.1).max().map_or(0, |m| m + 1);
    let grid = GridSpec::new(nx, ny)?;
    if cells.len() != grid.len() {
        return Err(Error::Format(format!(
            "expected {} cells, found {}",
            grid.len(),
            cells.len()
        )));
    }
    let mut values = vec![f64::NAN; grid.len()];
    for (i, j, v) in cells {
        values[grid.index(i, j)] = v;
    }
    FieldVector::new(grid, values)
}

/// Writes an 8-bit binary PGM (P5) heatmap, rows = first grid axis.
///
/// Values are mapped linearly from `[min, max]` onto `[0, 255]`; the header
/// comment records the scaling. A constant field maps to 0.
pub fn write_pgm<W: Write>(w: &mut W, field: &FieldVector) -> Result<()> {
    let g = field.grid();
    let min = field.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = field
        .values()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    write!(
        w,
        "P5\n# linear scale: 0 = {min:e}, 255 = {max:e}\n{} {}\n255\n",
        g.ny, g.nx
    )?;
    let pixels: Vec<u8> = field
        .values()
        .iter()
        .map(|v| {
            if span > 0.0 {
                ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    w.write_all(&pixels)?;
    Ok(())
}

pub fn save_field_csv(path: &Path, field: &FieldVector) -> Result<()> {
    write_field_csv(std::fs::File::create(path)?, field)
}

pub fn load_field_csv(path: &Path) -> Result<FieldVector> {
    read_field_csv(std::fs::File::open(path)?)
}
