//! `MOOREMAT` binary matrix files.
//!
//! Layout (little-endian): 8 magic bytes `MOOREMAT`, `u32` version (1),
//! `u64` rows, `u64` cols, then `rows × cols` `f64` values in row-major order.
//! Container formats embed the same record minus the magic through
//! [`write_matrix_payload`] / [`read_matrix_payload`].

use std::io::{Read, Write};
use std::path::Path;

use super::matrix::Matrix;
use crate::error::{MooreError, Result};

pub const MATRIX_MAGIC: [u8; 8] = *b"MOOREMAT";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    w.write_all(&MATRIX_MAGIC)?;
    write_matrix_payload(w, m)
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != MATRIX_MAGIC {
        return Err(MooreError::Format(format!("bad matrix magic {magic:02X?}")));
    }
    read_matrix_payload(r)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(28 + 8 * m.len());
    write_matrix(&mut buf, m)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let bytes = std::fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let m = read_matrix(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(MooreError::Format(format!("{} trailing bytes", cursor.len())));
    }
    Ok(m)
}

/// Version, shape and data, without the magic.
pub fn write_matrix_payload<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    write_f64s(w, m.data())
}

pub fn read_matrix_payload<R: Read>(r: &mut R) -> Result<Matrix> {
    read_version(r)?;
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| MooreError::Format(format!("shape {rows}x{cols} overflows")))?;
    let data = read_f64s(r, len)?;
    Matrix::new(rows, cols, data)
}

pub(crate) fn read_version<R: Read>(r: &mut R) -> Result<()> {
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(MooreError::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len.min(1 << 24));
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes_are_exact() {
        let m = Matrix::from_rows(&[&[1.0, 2.0]]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(&buf[..8], &[0x4D, 0x4F, 0x4F, 0x52, 0x45, 0x4D, 0x41, 0x54]);
        assert_eq!(&buf[8..12], &[1, 0, 0, 0]);
        assert_eq!(&buf[12..20], &1u64.to_le_bytes());
        assert_eq!(&buf[20..28], &2u64.to_le_bytes());
        assert_eq!(&buf[28..36], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 44);
        assert_eq!(read_matrix(&mut buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_wrong_magic_and_version() {
        let m = Matrix::identity(2);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_matrix(&mut bad.as_slice()), Err(MooreError::Format(_))));
        let mut bad = buf.clone();
        bad[8] = 2;
        assert!(matches!(read_matrix(&mut bad.as_slice()), Err(MooreError::Format(_))));
        // truncated payload
        assert!(read_matrix(&mut &buf[..buf.len() - 1]).is_err());
    }
}
