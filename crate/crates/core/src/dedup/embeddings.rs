use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// File magic of `embeddings.bin`.
pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

/// Row-major `count x dim` matrix of finite `f32` vectors with row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::InvalidArgument(format!(
                "{} ids and dim {dim} need {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Invariant {
                invariant: "finite vectors",
                subject: ids[pos / dim].clone(),
                detail: format!("component {} is {}", pos % dim, data[pos]),
            });
        }
        Ok(EmbeddingMatrix { ids, dim, data })
    }

    /// Builds a matrix from rows, using the row index as id.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("rows have different lengths".into()));
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        EmbeddingMatrix::new(ids, dim, rows.concat())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Reads `embeddings.bin` with its row-aligned `ids.txt`.
pub fn read_embeddings(bin: &Path, ids: &Path) -> Result<EmbeddingMatrix> {
    let mut file = std::fs::File::open(bin).map_err(|e| Error::io(bin, e))?;
    let mut header = [0u8; 12];
    file.read_exact(&mut header).map_err(|e| Error::io(bin, e))?;
    if &header[..4] != EMBEDDING_MAGIC {
        return Err(Error::Parse {
            path: bin.to_path_buf(),
            line: 0,
            message: "missing EMB1 magic".into(),
        });
    }
    let count = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    let mut body = Vec::new();
    file.read_to_end(&mut body).map_err(|e| Error::io(bin, e))?;
    if body.len() != count * dim * 4 {
        return Err(Error::Parse {
            path: bin.to_path_buf(),
            line: 0,
            message: format!("expected {} payload bytes, found {}", count * dim * 4, body.len()),
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let ids = read_ids(ids)?;
    if ids.len() != count {
        return Err(Error::InvalidArgument(format!(
            "{} ids for {count} embedding rows",
            ids.len()
        )));
    }
    EmbeddingMatrix::new(ids, dim, data)
}

/// One id per line; trailing newline optional.
pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

pub fn write_embeddings(m: &EmbeddingMatrix, bin: &Path, ids: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(12 + m.data.len() * 4);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(m.len() as u32).to_le_bytes());
    out.extend_from_slice(&(m.dim as u32).to_le_bytes());
    for x in &m.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(bin, out).map_err(|e| Error::io(bin, e))?;
    let mut f = std::fs::File::create(ids).map_err(|e| Error::io(ids, e))?;
    for id in &m.ids {
        writeln!(f, "{id}").map_err(|e| Error::io(ids, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix::new(vec!["a".into(), "b".into()], 3, vec![1.0, 2.0, 3.0, -0.5, 0.0, 9.25]).unwrap();
        let (bin, ids) = (dir.path().join("e.bin"), dir.path().join("ids.txt"));
        write_embeddings(&m, &bin, &ids).unwrap();
        let bytes = std::fs::read(&bin).unwrap();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(&bytes[4..12], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 12 + 6 * 4);
        assert_eq!(read_embeddings(&bin, &ids).unwrap(), m);

        std::fs::write(&ids, "a\n").unwrap();
        assert!(read_embeddings(&bin, &ids).is_err());
        std::fs::write(&bin, b"NOPE\0\0\0\0\0\0\0\0").unwrap();
        assert!(read_embeddings(&bin, &ids).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(EmbeddingMatrix::new(vec!["a".into()], 2, vec![1.0, f32::NAN]).is_err());
        assert!(EmbeddingMatrix::new(vec!["a".into()], 2, vec![1.0]).is_err());
    }
}
