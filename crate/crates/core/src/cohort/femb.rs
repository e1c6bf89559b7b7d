//! `.femb` embedding files: `FEMB`, u16 version, u32 rows, u32 dim, then
//! row-major f32 values. Everything little-endian, no padding.

use std::fs;
use std::path::Path;

use super::{CohortError, EmbeddingMatrix, Result};

pub const FEMB_MAGIC: &[u8; 4] = b"FEMB";
pub const FEMB_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

pub fn encode_embeddings(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + matrix.values().len() * 4);
    buf.extend_from_slice(FEMB_MAGIC);
    buf.extend_from_slice(&FEMB_VERSION.to_le_bytes());
    buf.extend_from_slice(&(matrix.n_rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(matrix.dim() as u32).to_le_bytes());
    for v in matrix.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Decodes a `.femb` payload. The modality label is not stored in the file;
/// the caller assigns it.
pub fn decode_embeddings(bytes: &[u8], modality: &str) -> Result<EmbeddingMatrix> {
    if bytes.len() < 4 || &bytes[..4] != FEMB_MAGIC {
        return Err(CohortError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CohortError::TruncatedFile {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEMB_VERSION {
        return Err(CohortError::UnsupportedVersion(version));
    }
    let n_rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let expected = HEADER_LEN + n_rows * dim * 4;
    if bytes.len() != expected {
        return Err(CohortError::TruncatedFile {
            expected,
            actual: bytes.len(),
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(modality, n_rows, dim, values)
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_embeddings(matrix))?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CohortError::MissingFile(path.to_path_buf()),
        _ => CohortError::Io(e),
    })?;
    let modality = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    decode_embeddings(&bytes, modality)
}
