//! Datasets, the EMBF embedding container, JSONL import and model files.

mod embf;
mod jsonl;
mod model;

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embf::{read_embf, read_embf_bytes, write_embf, write_embf_bytes, EMBF_MAGIC, EMBF_VERSION};
pub use jsonl::{import_jsonl, TextRow, TextTable};
pub use model::{load_model, load_model_bytes, save_model, save_model_bytes, ModelArtifact, Provenance, MODEL_MAGIC, MODEL_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub vector: Vec<f64>,
    pub label: usize,
}

/// Labeled fixed-dimension embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDataset {
    pub name: String,
    pub dim: usize,
    pub classes: Vec<String>,
    pub instances: Vec<Instance>,
    /// Extra header keys (for example extraction settings), kept verbatim.
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl EmbeddingDataset {
    pub fn new(name: impl Into<String>, dim: usize, classes: Vec<String>) -> Self {
        EmbeddingDataset {
            name: name.into(),
            dim,
            classes,
            instances: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.label).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Header("dimension must be positive".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::Header("class list is empty".into()));
        }
        let mut seen = HashSet::with_capacity(self.instances.len());
        for (index, inst) in self.instances.iter().enumerate() {
            if inst.vector.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    layer: 0,
                    expected: self.dim,
                    found: inst.vector.len(),
                });
            }
            if inst.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteVector { id: inst.id.clone() });
            }
            if inst.label >= self.classes.len() {
                return Err(Error::LabelOutOfRange {
                    index,
                    label: inst.label,
                    num_classes: self.classes.len(),
                });
            }
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::DuplicateId { id: inst.id.clone() });
            }
        }
        Ok(())
    }

    /// Instances at `indices`, in that order, under the same header.
    pub fn subset(&self, indices: &[usize]) -> EmbeddingDataset {
        EmbeddingDataset {
            name: self.name.clone(),
            dim: self.dim,
            classes: self.classes.clone(),
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
            metadata: self.metadata.clone(),
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Write through a temp file in the destination directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.pos as u64,
                needed: n as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Split off and verify the trailing FNV-1a checksum.
pub(crate) fn verify_checksum(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            offset: bytes.len() as u64,
            needed: 8,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(body)
}
