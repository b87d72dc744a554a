//! EMBF v1, little-endian:
//!
//! ```text
//! "EMBF" | u32 version | u32 n | u32 dim | u32 json_len | json metadata
//!        | n*dim f32 row-major | u64 FNV-1a of all preceding bytes
//! ```
//!
//! The JSON object carries `name`, `classes`, `ids`, `labels`; any other keys
//! are preserved in [`EmbeddingDataset::metadata`].

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fnv1a64, write_atomic, Cursor, EmbeddingDataset, Instance};
use crate::error::{Error, Result};

pub const EMBF_MAGIC: [u8; 4] = *b"EMBF";
pub const EMBF_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    classes: Vec<String>,
    ids: Vec<String>,
    labels: Vec<usize>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

pub fn write_embf_bytes(dataset: &EmbeddingDataset) -> Result<Vec<u8>> {
    dataset.validate()?;
    let header = Header {
        name: dataset.name.clone(),
        classes: dataset.classes.clone(),
        ids: dataset.instances.iter().map(|i| i.id.clone()).collect(),
        labels: dataset.labels(),
        extra: dataset.metadata.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let n = dataset.len();
    let mut out = Vec::with_capacity(20 + json.len() + n * dataset.dim * 4 + 8);
    out.extend_from_slice(&EMBF_MAGIC);
    out.extend_from_slice(&EMBF_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.dim as u32).to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for inst in &dataset.instances {
        for &v in &inst.vector {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

pub fn write_embf(dataset: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_embf_bytes(dataset)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_embf_bytes(bytes: &[u8]) -> Result<EmbeddingDataset> {
    let mut cur = Cursor::new(bytes);
    let magic: [u8; 4] = match bytes.get(..4) {
        Some(m) => m.try_into().unwrap(),
        None => return Err(Error::Truncated { offset: 0, needed: 4 }),
    };
    if magic != EMBF_MAGIC {
        return Err(Error::BadMagic { offset: 0, found: magic });
    }
    cur.take(4)?;
    let version = cur.u32()?;
    if version != EMBF_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: EMBF_VERSION,
        });
    }
    let n = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    let json_len = cur.u32()? as usize;
    let json = cur.take(json_len)?;
    let payload_offset = cur.offset();
    let payload_len = n
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Header(format!("payload size overflows for n = {n}, dim = {dim}")))?;
    let payload = cur.take(payload_len)?;
    let checksum_offset = cur.offset();
    let stored = cur.u64()?;
    let computed = fnv1a64(&bytes[..checksum_offset as usize]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    if cur.offset() as usize != bytes.len() {
        return Err(Error::Header(format!(
            "{} trailing bytes after checksum",
            bytes.len() - cur.offset() as usize
        )));
    }

    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Header(format!("metadata at offset 20: {e}")))?;
    if header.ids.len() != n || header.labels.len() != n {
        return Err(Error::Header(format!(
            "metadata lists {} ids and {} labels for n = {n} (payload at offset {payload_offset})",
            header.ids.len(),
            header.labels.len()
        )));
    }
    if dim == 0 {
        return Err(Error::Header("dimension must be positive".into()));
    }

    let mut seen = HashSet::with_capacity(n);
    let mut instances = Vec::with_capacity(n);
    for (row, (id, label)) in payload.chunks_exact(dim * 4).zip(header.ids.into_iter().zip(header.labels)) {
        let vector: Vec<f64> = row
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteVector { id });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { id });
        }
        instances.push(Instance { id, vector, label });
    }
    // n = 0 leaves zip empty; n > 0 with dim > 0 is fully covered above.
    let dataset = EmbeddingDataset {
        name: header.name,
        dim,
        classes: header.classes,
        instances,
        metadata: header.extra,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn read_embf(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_embf_bytes(&bytes)
}
