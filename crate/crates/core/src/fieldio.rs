//! Binary field files.
//!
//! ```text
//! DRIFTDECOMP-FIELD v1\n
//! xmin xmax ymin ymax nx ny ncomp\n
//! <nx*ny*ncomp little-endian f64, components interleaved per node>
//! ```
//!
//! Header floats use Rust's shortest round-trip formatting, so the grid is
//! reproduced bit-for-bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField, VectorField};

pub const FIELD_MAGIC: &str = "DRIFTDECOMP-FIELD v1";

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Scalar(ScalarField),
    Vector(VectorField),
}

pub(crate) fn grid_line(grid: &Grid2D) -> String {
    format!("{:?} {:?} {:?} {:?} {} {}", grid.xmin, grid.xmax, grid.ymin, grid.ymax, grid.nx, grid.ny)
}

pub(crate) fn parse_grid_tokens(tokens: &[&str]) -> Result<Grid2D> {
    let bad = |what: &str| Error::FormatVersionMismatch(format!("malformed grid header: {what}"));
    if tokens.len() != 6 {
        return Err(bad("expected 6 grid tokens"));
    }
    let f = |i: usize| tokens[i].parse::<f64>().map_err(|_| bad(tokens[i]));
    let n = |i: usize| tokens[i].parse::<usize>().map_err(|_| bad(tokens[i]));
    Grid2D::new(f(0)?, f(1)?, f(2)?, f(3)?, n(4)?, n(5)?)
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::FormatVersionMismatch("truncated payload".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub(crate) fn read_line(r: &mut impl BufRead) -> Result<String> {
    let mut line = String::new();
    let n = r.read_line(&mut line)?;
    if n == 0 || !line.ends_with('\n') {
        return Err(Error::FormatVersionMismatch("unexpected end of header".into()));
    }
    line.pop();
    Ok(line)
}

pub fn write_field(w: &mut impl Write, field: &FieldData) -> Result<()> {
    let (grid, comps): (&Grid2D, Vec<&[f64]>) = match field {
        FieldData::Scalar(s) => (s.grid(), vec![s.values()]),
        FieldData::Vector(v) => (v.grid(), vec![v.ux(), v.uy()]),
    };
    writeln!(w, "{FIELD_MAGIC}")?;
    writeln!(w, "{} {}", grid_line(grid), comps.len())?;
    let mut interleaved = Vec::with_capacity(grid.len() * comps.len());
    for i in 0..grid.len() {
        interleaved.extend(comps.iter().map(|c| c[i]));
    }
    write_f64s(w, &interleaved)?;
    Ok(())
}

pub fn read_field(r: &mut impl BufRead) -> Result<FieldData> {
    let magic = read_line(r)?;
    if magic != FIELD_MAGIC {
        return Err(Error::FormatVersionMismatch(format!("expected '{FIELD_MAGIC}', found '{magic}'")));
    }
    let header = read_line(r)?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 7 {
        return Err(Error::FormatVersionMismatch("expected 7 header tokens".into()));
    }
    let grid = parse_grid_tokens(&tokens[..6])?;
    let ncomp: usize = tokens[6]
        .parse()
        .map_err(|_| Error::FormatVersionMismatch(format!("bad component count '{}'", tokens[6])))?;
    let data = read_f64s(r, grid.len() * ncomp)?;
    match ncomp {
        1 => Ok(FieldData::Scalar(ScalarField::new(grid, data)?)),
        2 => {
            let ux = data.iter().step_by(2).copied().collect();
            let uy = data.iter().skip(1).step_by(2).copied().collect();
            Ok(FieldData::Vector(VectorField::new(grid, ux, uy)?))
        }
        n => Err(Error::FormatVersionMismatch(format!("unsupported component count {n}"))),
    }
}

pub fn save_field(path: impl AsRef<Path>, field: &FieldData) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<FieldData> {
    read_field(&mut BufReader::new(File::open(path)?))
}
