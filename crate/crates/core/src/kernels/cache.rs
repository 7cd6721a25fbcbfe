//! Binary embedding cache.
//!
//! Layout: magic `GDE1`, `u32` sample count, then per sample a `u16` id
//! length, the UTF-8 id, `u32` rows, `u32` cols and `rows × cols` `f32`
//! values in row-major order. All integers and floats are little-endian. A
//! plain-text index with one id per line sits next to the cache file.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::DownsampledEmbedding;
use crate::error::{Error, Result};
use crate::io::write_atomic;

const MAGIC: &[u8; 4] = b"GDE1";

/// Path of the id index accompanying `cache`.
pub fn index_path(cache: &Path) -> PathBuf {
    let mut name = cache.as_os_str().to_owned();
    name.push(".index");
    PathBuf::from(name)
}

pub fn encode(embeddings: &[DownsampledEmbedding]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(embeddings.len())
        .map_err(|_| Error::Cache("too many samples".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for e in embeddings {
        let id = e.id.as_bytes();
        let id_len =
            u16::try_from(id.len()).map_err(|_| Error::Cache(format!("id too long: {}", e.id)))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        let (rows, cols) = e.values.dim();
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for row in e.values.outer_iter() {
            for &v in row {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<DownsampledEmbedding>> {
    let mut cur = bytes;
    let mut magic = [0u8; 4];
    read_exact(&mut cur, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Cache("bad magic bytes".into()));
    }
    let count = read_u32(&mut cur)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let mut len = [0u8; 2];
        read_exact(&mut cur, &mut len)?;
        let mut id = vec![0u8; usize::from(u16::from_le_bytes(len))];
        read_exact(&mut cur, &mut id)?;
        let id = String::from_utf8(id).map_err(|_| Error::Cache("id is not UTF-8".into()))?;
        let rows = read_u32(&mut cur)? as usize;
        let cols = read_u32(&mut cur)? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Cache("dimension overflow".into()))?;
        if cur.len() < n * 4 {
            return Err(Error::Cache(format!("truncated values for '{id}'")));
        }
        let values: Vec<f64> = cur[..n * 4]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        cur = &cur[n * 4..];
        let values = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::Cache(e.to_string()))?;
        out.push(DownsampledEmbedding { id, values });
    }
    if !cur.is_empty() {
        return Err(Error::Cache(format!("{} trailing bytes", cur.len())));
    }
    Ok(out)
}

fn read_exact(cur: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| Error::Cache("unexpected end of file".into()))
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(cur, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Writes the cache and its index. Both are written in full before returning.
pub fn write_embedding_cache(path: &Path, embeddings: &[DownsampledEmbedding]) -> Result<()> {
    write_atomic(path, &encode(embeddings)?)?;
    let mut index = String::new();
    for e in embeddings {
        index.push_str(&e.id);
        index.push('\n');
    }
    write_atomic(&index_path(path), index.as_bytes())
}

pub fn read_embedding_cache(path: &Path) -> Result<Vec<DownsampledEmbedding>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
