//! Trained-head files, little-endian:
//!
//! ```text
//! "KDMF" | u32 version | u32 json_len | json header | u64 count
//!        | count f64 (per layer: weights, bias; then rff frequencies, phases)
//!        | u64 FNV-1a of all preceding bytes
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{verify_checksum, write_atomic, Cursor};
use crate::bayes::{Activation, BetaState, DropoutHead, LayerSpec};
use crate::error::{Error, Result};
use crate::kernels::{FeatureMap, KernelConfig, RandomFeatures};
use crate::training::TrainConfig;

pub const MODEL_MAGIC: [u8; 4] = *b"KDMF";
pub const MODEL_VERSION: u32 = 1;

/// Where a model came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub split: String,
    pub seed: u64,
    /// Unix seconds; informational only.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub head: DropoutHead,
    pub train_config: TrainConfig,
    pub format_version: u32,
    pub provenance: Provenance,
}

impl ModelArtifact {
    pub fn new(head: DropoutHead, train_config: TrainConfig, provenance: Provenance) -> Self {
        ModelArtifact {
            head,
            train_config,
            format_version: MODEL_VERSION,
            provenance,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    in_dim: usize,
    out_dim: usize,
    beta_state: BetaState,
    fixed_keep_prob: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    input_dim: usize,
    num_classes: usize,
    tau: f64,
    l2: f64,
    activation: Activation,
    seed: u64,
    kernel: KernelConfig,
    layers: Vec<LayerHeader>,
    has_random_features: bool,
    train_config: TrainConfig,
    provenance: Provenance,
}

pub fn save_model_bytes(model: &ModelArtifact) -> Result<Vec<u8>> {
    let head = &model.head;
    head.validate()?;
    let fm = &head.feature_map;
    let header = Header {
        input_dim: fm.input_dim(),
        num_classes: head.num_classes,
        tau: head.tau,
        l2: head.l2,
        activation: head.activation,
        seed: head.seed,
        kernel: fm.config().clone(),
        layers: head
            .layers
            .iter()
            .map(|l| LayerHeader {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                beta_state: l.beta_state,
                fixed_keep_prob: l.fixed_keep_prob,
            })
            .collect(),
        has_random_features: fm.random_features().is_some(),
        train_config: model.train_config.clone(),
        provenance: model.provenance.clone(),
    };
    let json = serde_json::to_vec(&header)?;

    let mut values: Vec<f64> = Vec::new();
    for l in &head.layers {
        values.extend(&l.weights);
        values.extend(&l.bias);
    }
    if let Some(r) = fm.random_features() {
        values.extend(&r.frequencies);
        values.extend(&r.phases);
    }

    let mut out = Vec::with_capacity(12 + json.len() + 8 + values.len() * 8 + 8);
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let checksum = super::fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

pub fn save_model(model: &ModelArtifact, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &save_model_bytes(model)?)
}

pub fn load_model_bytes(bytes: &[u8]) -> Result<ModelArtifact> {
    let mut cur = Cursor::new(bytes);
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic { offset: 0, found: magic });
    }
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let body = verify_checksum(bytes)?;
    let mut cur = Cursor::new(body);
    cur.take(8)?;
    let json_len = cur.u32()? as usize;
    let header: Header =
        serde_json::from_slice(cur.take(json_len)?).map_err(|e| Error::Header(format!("model header: {e}")))?;
    let count = cur.u64()? as usize;
    let raw = cur.take(count.checked_mul(8).ok_or_else(|| Error::Header("parameter count overflows".into()))?)?;
    if cur.offset() as usize != body.len() {
        return Err(Error::Header("trailing bytes before checksum".into()));
    }
    let mut values = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let mut take = |n: usize, what: &str| -> Result<Vec<f64>> {
        let v: Vec<f64> = values.by_ref().take(n).collect();
        if v.len() != n {
            return Err(Error::Header(format!("payload too short for {what}")));
        }
        Ok(v)
    };

    let mut layers = Vec::with_capacity(header.layers.len());
    for (i, l) in header.layers.iter().enumerate() {
        let weights = take(l.in_dim * l.out_dim, &format!("layer {i} weights"))?;
        let bias = take(l.out_dim, &format!("layer {i} bias"))?;
        layers.push(LayerSpec {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            weights,
            bias,
            beta_state: l.beta_state,
            fixed_keep_prob: l.fixed_keep_prob,
        });
    }
    let rff = if header.has_random_features {
        let d = header.kernel.rff_dim;
        Some(RandomFeatures {
            frequencies: take(d * header.input_dim, "random frequencies")?,
            phases: take(d, "random phases")?,
        })
    } else {
        None
    };
    if values.next().is_some() {
        return Err(Error::Header("payload longer than the header describes".into()));
    }
    let head = DropoutHead {
        layers,
        feature_map: FeatureMap::from_parts(header.kernel, header.input_dim, rff)?,
        num_classes: header.num_classes,
        tau: header.tau,
        l2: header.l2,
        activation: header.activation,
        seed: header.seed,
    };
    head.validate()?;
    Ok(ModelArtifact {
        head,
        train_config: header.train_config,
        format_version: version,
        provenance: header.provenance,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_model_bytes(&bytes)
}
