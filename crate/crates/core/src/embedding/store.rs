//! Persistent id → vector store.
//!
//! Binary layout (all little endian):
//!
//! ```text
//! magic  b"EKVS"
//! u32    version (1)
//! u32    dim
//! u64    count
//! count × { u64 id, dim × f32 value }   // ascending id
//! ```
//!
//! Metadata lives in a JSON sidecar next to the binary file
//! (`<file>.meta.json`).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{cosine_from_parts, EmbeddingError};

pub const STORE_MAGIC: &[u8; 4] = b"EKVS";
pub const STORE_VERSION: u32 = 1;

/// A stored vector. Values are kept as f32; `norm` and `norm_sq` are computed
/// in f64 from those f32 values, so they describe the stored vector exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub id: u64,
    values: Vec<f32>,
    norm_sq: f64,
}

impl EmbeddingVector {
    pub fn from_f32(id: u64, values: Vec<f32>) -> Self {
        let norm_sq = values.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
        Self { id, values, norm_sq }
    }

    pub fn new(id: u64, values: &[f64]) -> Self {
        Self::from_f32(id, values.iter().map(|&x| x as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&x| f64::from(x)).collect()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.values.iter().zip(other).map(|(&a, b)| f64::from(a) * b).sum()
    }

    /// Cosine against a query vector with precomputed squared norm.
    pub fn cosine(&self, query: &[f64], query_norm_sq: f64) -> Result<f64, EmbeddingError> {
        if query.len() != self.dim() {
            return Err(EmbeddingError::DimMismatch { expected: self.dim(), got: query.len() });
        }
        cosine_from_parts(self.dot(query), self.norm_sq, query_norm_sq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreEntryMeta {
    pub frame_index: u64,
    /// SHA-256 of the embedded text.
    pub text_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StoreMeta {
    pub dim: usize,
    pub provider: String,
    pub entries: BTreeMap<u64, StoreEntryMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    entries: BTreeMap<u64, EmbeddingVector>,
    pub meta: StoreMeta,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EmbeddingError {
    EmbeddingError::Io(format!("{}: {e}", path.display()))
}

impl VectorStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new(), meta: StoreMeta { dim, ..Default::default() } }
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

    /// Inserts or replaces the vector stored under `id`.
    pub fn upsert(&mut self, id: u64, values: &[f64]) -> Result<(), EmbeddingError> {
        if values.len() != self.dim {
            return Err(EmbeddingError::DimMismatch { expected: self.dim, got: values.len() });
        }
        self.entries.insert(id, EmbeddingVector::new(id, values));
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&EmbeddingVector> {
        self.entries.get(&id)
    }

    /// Entries in ascending id order.
    pub fn scan(&self) -> impl Iterator<Item = &EmbeddingVector> + '_ {
        self.entries.values()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.keys().copied().collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = BufWriter::new(f);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
        write(STORE_MAGIC)?;
        write(&STORE_VERSION.to_le_bytes())?;
        write(&(self.dim as u32).to_le_bytes())?;
        write(&(self.entries.len() as u64).to_le_bytes())?;
        for v in self.entries.values() {
            write(&v.id.to_le_bytes())?;
            for x in &v.values {
                write(&x.to_le_bytes())?;
            }
        }
        w.flush().map_err(|e| io_err(path, e))?;
        let mut meta = self.meta.clone();
        meta.dim = self.dim;
        let json = serde_json::to_string_pretty(&meta).map_err(|e| EmbeddingError::Format(e.to_string()))?;
        let side = sidecar_path(path);
        fs::write(&side, json + "\n").map_err(|e| io_err(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| io_err(path, e))?;
        let mut store = Self::decode(&bytes)?;
        let side = sidecar_path(path);
        if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
            store.meta = serde_json::from_str(&text).map_err(|e| EmbeddingError::Format(format!("{}: {e}", side.display())))?;
            if store.meta.dim != store.dim {
                return Err(EmbeddingError::Format(format!(
                    "sidecar dim {} disagrees with store dim {}",
                    store.meta.dim, store.dim
                )));
            }
        }
        Ok(store)
    }

    fn decode(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let mut cursor = 0usize;
        let mut take = |n: usize| -> Result<&[u8], EmbeddingError> {
            let s = bytes
                .get(cursor..cursor + n)
                .ok_or_else(|| EmbeddingError::Format("truncated file".into()))?;
            cursor += n;
            Ok(s)
        };
        if take(4)? != STORE_MAGIC {
            return Err(EmbeddingError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != STORE_VERSION {
            return Err(EmbeddingError::Format(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut store = Self::new(dim);
        for _ in 0..count {
            let id = u64::from_le_bytes(take(8)?.try_into().unwrap());
            let raw = take(dim * 4)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            if store.entries.insert(id, EmbeddingVector::from_f32(id, values)).is_some() {
                return Err(EmbeddingError::Format(format!("duplicate id {id}")));
            }
        }
        if take(1).is_ok() {
            return Err(EmbeddingError::Format("trailing bytes".into()));
        }
        Ok(store)
    }
}
