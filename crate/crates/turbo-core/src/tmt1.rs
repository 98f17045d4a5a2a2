//! TMT1 on-disk tensor format.
//!
//! Layout: the 4-byte magic `TMT1`, two little-endian `u32` fields (rows,
//! cols), then `rows * cols` little-endian `f32` values in row-major order.
//! Readers reject bad magic, truncated payloads, trailing bytes, and
//! non-finite values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &[u8; 4] = b"TMT1";

/// Serializes a matrix into a writer.
pub fn write(mut w: impl Write, m: &Matrix) -> Result<()> {
    if m.rows() > u32::MAX as usize || m.cols() > u32::MAX as usize {
        return Err(Error::Format(format!(
            "matrix {}x{} exceeds the u32 header range",
            m.rows(),
            m.cols()
        )));
    }
    w.write_all(MAGIC)?;
    w.write_all(&(m.rows() as u32).to_le_bytes())?;
    w.write_all(&(m.cols() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(m.data().len() * 4);
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Deserializes a matrix from a reader, validating the full format.
pub fn read(mut r: impl Read) -> Result<Matrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for the TMT1 magic".to_string()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut header = [0u8; 8];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("file too short for the TMT1 header".to_string()))?;
    let rows = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("element count overflows".to_string()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != count * 4 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, expected {} for {rows}x{cols}",
            payload.len(),
            count * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, data)
}

/// Writes a matrix to a file path.
pub fn write_file(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let file = File::create(path)?;
    write(BufWriter::new(file), m)
}

/// Reads a matrix from a file path.
pub fn read_file(path: impl AsRef<Path>) -> Result<Matrix> {
    let file = File::open(path)?;
    read(BufReader::new(file))
}
