//! Portable state files in the OUGS1 format: an ASCII header line
//! `OUGS1 N M L` followed by M^N raw little-endian 8-byte IEEE floats
//! in row-major order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{GridSpec, GridState};
use crate::error::{Error, Result};

/// Writes a state in the OUGS1 format.
pub fn write_ougs<W: Write>(state: &GridState, mut w: W) -> Result<()> {
    let spec = state.spec();
    writeln!(
        w,
        "OUGS1 {} {} {:.16e}",
        spec.dim(),
        spec.points_per_axis(),
        spec.half_width()
    )?;
    for v in state.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a state in the OUGS1 format.
pub fn read_ougs<R: Read>(r: R) -> Result<GridState> {
    let mut reader = BufReader::new(r);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "OUGS1" {
        return Err(Error::Format(format!(
            "expected header 'OUGS1 N M L', got {header:?}"
        )));
    }
    let n: usize = fields[1]
        .parse()
        .map_err(|_| Error::Format(format!("bad dimension field {:?}", fields[1])))?;
    let m: usize = fields[2]
        .parse()
        .map_err(|_| Error::Format(format!("bad point-count field {:?}", fields[2])))?;
    let l: f64 = fields[3]
        .parse()
        .map_err(|_| Error::Format(format!("bad half-width field {:?}", fields[3])))?;
    let spec = GridSpec::new(n, l, m)?;

    let count = spec.len();
    let mut buf = vec![0u8; count * 8];
    reader.read_exact(&mut buf).map_err(|e| {
        Error::Format(format!("truncated OUGS1 payload (wanted {count} values): {e}"))
    })?;
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    GridState::new(spec, values)
}

/// Writes a state to a file path.
pub fn save_ougs(state: &GridState, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_ougs(state, std::io::BufWriter::new(file))
}

/// Reads a state from a file path.
pub fn load_ougs(path: impl AsRef<Path>) -> Result<GridState> {
    let file = std::fs::File::open(path)?;
    read_ougs(file)
}
