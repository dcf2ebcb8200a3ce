//! Append-only binary store of context embeddings.
//!
//! Layout (little-endian): magic `PRMC`, `u32` version (1), `u32` width, then
//! records of `u16` key length, UTF-8 key (`station|YYYY-MM-DD`) and `width`
//! `f32` values. A key written twice resolves to its last record.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::embed::{ContextEmbedding, EmbeddingKey};
use crate::error::CacheError;

pub const MAGIC: &[u8; 4] = b"PRMC";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 12;

/// Tag given to embeddings read back from disk.
pub const CACHE_TAG: &str = "cache";

pub fn encode_header(dim: usize) -> [u8; 12] {
    let mut h = [0u8; 12];
    h[..4].copy_from_slice(MAGIC);
    h[4..8].copy_from_slice(&VERSION.to_le_bytes());
    h[8..].copy_from_slice(&(dim as u32).to_le_bytes());
    h
}

pub fn encode_record(out: &mut Vec<u8>, key: &EmbeddingKey, vector: &[f32]) {
    let key = key.to_string();
    out.extend_from_slice(&(key.len() as u16).to_le_bytes());
    out.extend_from_slice(key.as_bytes());
    for v in vector {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes a whole cache image into its records (in file order) and width.
pub fn decode(bytes: &[u8], path: &str) -> Result<(usize, Vec<(EmbeddingKey, Vec<f32>)>), CacheError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CacheError::BadMagic { path: path.into() });
    }
    if bytes.len() < HEADER_LEN as usize {
        return Err(CacheError::Truncated {
            path: path.into(),
            offset: 4,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CacheError::Version {
            path: path.into(),
            version,
        });
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut records = Vec::new();
    let mut pos = HEADER_LEN as usize;
    while pos < bytes.len() {
        let start = pos as u64;
        let truncated = || CacheError::Truncated {
            path: path.into(),
            offset: start,
        };
        if pos + 2 > bytes.len() {
            return Err(truncated());
        }
        let klen = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]) as usize;
        pos += 2;
        if pos + klen + 4 * dim > bytes.len() {
            return Err(truncated());
        }
        let key = std::str::from_utf8(&bytes[pos..pos + klen])
            .ok()
            .and_then(EmbeddingKey::parse)
            .ok_or(CacheError::BadKey {
                path: path.into(),
                offset: start,
            })?;
        pos += klen;
        let vector = bytes[pos..pos + 4 * dim]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 4 * dim;
        records.push((key, vector));
    }
    Ok((dim, records))
}

pub fn write_file(path: &Path, dim: usize, entries: &[ContextEmbedding]) -> Result<(), CacheError> {
    let mut bytes = encode_header(dim).to_vec();
    for e in entries {
        if e.vector.len() != dim {
            return Err(CacheError::PutWidth {
                expected: dim,
                got: e.vector.len(),
            });
        }
        encode_record(&mut bytes, &e.key, &e.vector);
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<(usize, Vec<ContextEmbedding>), CacheError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let (dim, records) = decode(&bytes, &path.display().to_string())?;
    Ok((
        dim,
        records
            .into_iter()
            .map(|(key, vector)| ContextEmbedding {
                key,
                vector,
                provider_tag: CACHE_TAG.to_string(),
            })
            .collect(),
    ))
}

/// Single-writer embedding cache backed by a file.
#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    dim: usize,
    entries: HashMap<EmbeddingKey, Vec<f32>>,
    writer: BufWriter<File>,
}

impl EmbeddingCache {
    /// Opens `path`, creating it with width `dim` when absent.
    pub fn open(path: &Path, dim: usize) -> Result<Self, CacheError> {
        let mut entries = HashMap::new();
        if path.exists() && std::fs::metadata(path)?.len() > 0 {
            let (found, records) = read_file(path)?;
            if found != dim {
                return Err(CacheError::Width {
                    path: path.display().to_string(),
                    expected: dim,
                    found,
                });
            }
            for e in records {
                entries.insert(e.key, e.vector);
            }
        } else {
            std::fs::write(path, encode_header(dim))?;
        }
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(EmbeddingCache {
            path: path.to_path_buf(),
            dim,
            entries,
            writer: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &EmbeddingKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &EmbeddingKey) -> Option<ContextEmbedding> {
        self.entries.get(key).map(|v| ContextEmbedding {
            key: key.clone(),
            vector: v.clone(),
            provider_tag: CACHE_TAG.to_string(),
        })
    }

    pub fn put(&mut self, embedding: &ContextEmbedding) -> Result<(), CacheError> {
        if embedding.vector.len() != self.dim {
            return Err(CacheError::PutWidth {
                expected: self.dim,
                got: embedding.vector.len(),
            });
        }
        let mut buf = Vec::with_capacity(2 + 32 + 4 * self.dim);
        encode_record(&mut buf, &embedding.key, &embedding.vector);
        self.writer.write_all(&buf)?;
        self.entries.insert(embedding.key.clone(), embedding.vector.clone());
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), CacheError> {
        self.writer.flush()?;
        Ok(())
    }
}

impl Drop for EmbeddingCache {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}
