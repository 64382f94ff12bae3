//! FGF1 field files and atomic file writes.
//!
//! An FGF1 file is one ASCII header line
//! `FGF1 <n> <m> <x0> <y0> <L1> <L2>\n` followed by `n*m` little-endian
//! `f64` values with `i` as the fast index.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, RectDomain};

const MAGIC: &str = "FGF1";

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::corrupt(path, "path has no file name"))?;
    let tmp_name = format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id());
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => Path::new(&tmp_name).to_path_buf(),
    };
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn encode_field(field: &Field) -> Vec<u8> {
    let g = field.grid();
    let d = g.domain;
    let header = format!("{MAGIC} {} {} {} {} {} {}\n", g.n, g.m, d.x0, d.y0, d.lx, d.ly);
    let mut out = Vec::with_capacity(header.len() + 8 * g.len());
    out.extend_from_slice(header.as_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8], path: &Path) -> Result<Field> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::corrupt(path, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::corrupt(path, "header is not ASCII"))?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.len() != 7 || parts[0] != MAGIC {
        return Err(Error::corrupt(path, format!("bad header '{header}'")));
    }
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::corrupt(path, format!("bad integer '{s}'")))
    };
    let real = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::corrupt(path, format!("bad real '{s}'")))
    };
    let (n, m) = (int(parts[1])?, int(parts[2])?);
    let domain = RectDomain::new(real(parts[3])?, real(parts[4])?, real(parts[5])?, real(parts[6])?)?;
    let grid = Grid::new(domain, n, m)?;
    let body = &bytes[nl + 1..];
    if body.len() != 8 * grid.len() {
        return Err(Error::corrupt(
            path,
            format!("expected {} payload bytes, found {}", 8 * grid.len(), body.len()),
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Field::from_vec(grid, values)
}

pub fn write_field(path: &Path, field: &Field) -> Result<()> {
    write_atomic(path, &encode_field(field))
}

pub fn read_field(path: &Path) -> Result<Field> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes, path)
}
