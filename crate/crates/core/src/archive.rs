//! `SGM1` named-tensor container shared by detector maps and model files.
//!
//! Layout: the four magic bytes `SGM1`, then a sequence of entries until end of
//! file. Each entry is `name_len: u32`, `name` (UTF-8), `rank: u32`,
//! `dims: [u32; rank]`, then `prod(dims)` little-endian `f32` values in
//! row-major order. All integers are little-endian.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::recognizer::Tensor;

pub const MAGIC: &[u8; 4] = b"SGM1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("bad magic bytes, expected SGM1")]
    BadMagic,
    #[error("truncated archive while reading {0}")]
    Truncated(String),
    #[error("malformed entry {name}: {reason}")]
    Malformed { name: String, reason: String },
    #[error("missing tensor {0}")]
    Missing(String),
}

/// Ordered list of named tensors. Entry order is preserved on write.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    entries: Vec<(String, Tensor<f32>)>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>, ArchiveError> {
        self.get(name).ok_or_else(|| ArchiveError::Missing(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut cur = bytes;
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| ArchiveError::Truncated("magic".into()))?;
        if &magic != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        let mut archive = Archive::new();
        while !cur.is_empty() {
            let name_len = read_u32(&mut cur, "name length")? as usize;
            if name_len > cur.len() {
                return Err(ArchiveError::Truncated("name".into()));
            }
            let (name_bytes, rest) = cur.split_at(name_len);
            cur = rest;
            let name = String::from_utf8(name_bytes.to_vec()).map_err(|_| ArchiveError::Malformed {
                name: "<non-utf8>".into(),
                reason: "name is not valid UTF-8".into(),
            })?;
            let rank = read_u32(&mut cur, &name)? as usize;
            if rank == 0 || rank > 8 {
                return Err(ArchiveError::Malformed {
                    name,
                    reason: format!("unsupported rank {rank}"),
                });
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(&mut cur, &name)? as usize);
            }
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&c| c > 0)
                .ok_or_else(|| ArchiveError::Malformed {
                    name: name.clone(),
                    reason: format!("invalid dims {dims:?}"),
                })?;
            if count.checked_mul(4).is_none_or(|b| b > cur.len()) {
                return Err(ArchiveError::Truncated(name));
            }
            let (payload, rest) = cur.split_at(count * 4);
            cur = rest;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::from_vec(&dims, data).map_err(|e| ArchiveError::Malformed {
                name: name.clone(),
                reason: e.to_string(),
            })?;
            archive.push(name, tensor);
        }
        Ok(archive)
    }

    pub fn read(path: &Path) -> Result<Self, ArchiveError> {
        let bytes = fs::read(path).map_err(|source| ArchiveError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<(), ArchiveError> {
        let io_err = |source| ArchiveError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io_err)?;
        f.write_all(&self.to_bytes()).map_err(io_err)?;
        Ok(())
    }
}

fn read_u32(cur: &mut &[u8], what: &str) -> Result<u32, ArchiveError> {
    let mut buf = [0u8; 4];
    cur.read_exact(&mut buf)
        .map_err(|_| ArchiveError::Truncated(what.to_string()))?;
    Ok(u32::from_le_bytes(buf))
}
