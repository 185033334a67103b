//! The `XG1` binary grid format.
//!
//! Layout: magic `b"XG1\0"`, three little-endian `u32` dimensions
//! `(T, H, W)`, then `T*H*W` little-endian `f64` values in time-major,
//! row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"XG1\0";

pub fn write_xg1(path: &Path, dims: [usize; 3], values: &[f64]) -> Result<()> {
    if dims.iter().product::<usize>() != values.len() {
        return Err(Error::ShapeMismatch(format!(
            "XG1 dims {dims:?} do not match {} values",
            values.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(&MAGIC)?;
    for d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        write(&d.to_le_bytes())?;
    }
    for v in values {
        write(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_xg1(path: &Path) -> Result<([usize; 3], Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| Error::Format {
        path: path.into(),
        reason: "truncated header".into(),
    })?;
    if header[..4] != MAGIC {
        return Err(Error::Format { path: path.into(), reason: "bad magic".into() });
    }
    let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let dims = [dim(0), dim(1), dim(2)];
    let n: usize = dims.iter().product();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != n * 8 {
        return Err(Error::ShapeMismatch(format!(
            "{}: header declares {n} values, payload holds {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, values))
}
