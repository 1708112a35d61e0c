//! MMFB tensor files.
//!
//! Layout (little-endian): the bytes `MMFB`, `u32` version (= 1), `u32`
//! rows, `u32` cols, then `rows * cols` IEEE-754 binary32 values in
//! row-major order. Vectors are stored as `1 × n` matrices.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"MMFB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MmfbError {
    #[error("bad magic {0:?}, expected \"MMFB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}, expected {VERSION}")]
    Version(u32),
    #[error("truncated: header needs {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("non-finite value {value} at element {element} (byte offset {byte_offset})")]
    NonFinite {
        element: usize,
        byte_offset: usize,
        value: f32,
    },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
}

pub fn encode(m: &Matrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    write_to(&mut out, m).expect("writing to a Vec cannot fail");
    out
}

pub fn write_to<W: Write>(w: &mut W, m: &Matrix<f32>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.rows() as u32).to_le_bytes())?;
    w.write_all(&(m.cols() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(4 * m.len());
    for x in m.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Decodes one record from the front of `bytes`, returning the matrix and
/// the number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Matrix<f32>, usize), MmfbError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(MmfbError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(MmfbError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(MmfbError::BadMagic(bytes[..4].try_into().unwrap()));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(MmfbError::Version(version));
    }
    let rows = u32_at(bytes, 8) as usize;
    let cols = u32_at(bytes, 12) as usize;
    let total = HEADER_LEN + 4 * rows * cols;
    if bytes.len() < total {
        return Err(MmfbError::Truncated {
            expected: total,
            actual: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (element, chunk) in bytes[HEADER_LEN..total].chunks_exact(4).enumerate() {
        let value = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !value.is_finite() {
            return Err(MmfbError::NonFinite {
                element,
                byte_offset: HEADER_LEN + 4 * element,
                value,
            });
        }
        data.push(value);
    }
    let m = Matrix::from_vec(rows, cols, data).expect("length matches header");
    Ok((m, total))
}

/// Decodes a complete record; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<Matrix<f32>, MmfbError> {
    let (m, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(MmfbError::Trailing(bytes.len() - used));
    }
    Ok(m)
}

pub fn save_matrix(path: &Path, m: &Matrix<f32>) -> std::io::Result<()> {
    fs::write(path, encode(m))
}
