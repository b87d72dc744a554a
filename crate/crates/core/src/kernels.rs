//! Deterministic feature maps applied to raw embeddings before the dropout head.
//!
//! `Squared` is the elementwise square (optionally followed by the raw vector),
//! which is the diagonal part of a degree-2 polynomial feature map. Gaussian and
//! Laplacian kernels are realized with random Fourier features whose
//! frequencies are drawn once from `rff_seed` and then frozen.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Squared,
    Linear,
    RbfRff,
    LaplacianRff,
    Sigmoid,
}

impl KernelKind {
    pub fn is_random_features(self) -> bool {
        matches!(self, KernelKind::RbfRff | KernelKind::LaplacianRff)
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "squared" => Ok(KernelKind::Squared),
            "linear" => Ok(KernelKind::Linear),
            "rbf" | "rbf_rff" | "gaussian" => Ok(KernelKind::RbfRff),
            "laplacian" | "laplacian_rff" => Ok(KernelKind::LaplacianRff),
            "sigmoid" => Ok(KernelKind::Sigmoid),
            other => Err(Error::Config(format!("unknown kernel kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// Bandwidth for the random-feature kernels.
    pub gamma: f64,
    pub rff_dim: usize,
    pub rff_seed: u64,
    /// Slope for `Sigmoid`.
    pub scale: f64,
    /// Append the raw vector after the mapped features.
    pub concat_original: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            kind: KernelKind::Squared,
            gamma: 1.0,
            rff_dim: 1024,
            rff_seed: 0,
            scale: 1.0,
            concat_original: true,
        }
    }
}

impl KernelConfig {
    pub fn squared() -> Self {
        Self::default()
    }

    pub fn linear() -> Self {
        KernelConfig {
            kind: KernelKind::Linear,
            concat_original: false,
            ..Self::default()
        }
    }

    pub fn rbf(gamma: f64, rff_dim: usize, rff_seed: u64) -> Self {
        KernelConfig {
            kind: KernelKind::RbfRff,
            gamma,
            rff_dim,
            rff_seed,
            concat_original: false,
            ..Self::default()
        }
    }

    pub fn laplacian(gamma: f64, rff_dim: usize, rff_seed: u64) -> Self {
        KernelConfig {
            kind: KernelKind::LaplacianRff,
            ..Self::rbf(gamma, rff_dim, rff_seed)
        }
    }

    pub fn sigmoid(scale: f64) -> Self {
        KernelConfig {
            kind: KernelKind::Sigmoid,
            scale,
            concat_original: false,
            ..Self::default()
        }
    }

    pub fn with_concat(mut self, concat_original: bool) -> Self {
        self.concat_original = concat_original;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_random_features() {
            if !(self.gamma > 0.0 && self.gamma.is_finite()) {
                return Err(Error::Config(format!("kernel gamma must be positive, got {}", self.gamma)));
            }
            if self.rff_dim == 0 {
                return Err(Error::Config("rff_dim must be at least 1".into()));
            }
        }
        if self.kind == KernelKind::Sigmoid && !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("sigmoid scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Length of the mapped vector for an input of `input_dim` components.
pub fn output_dim(cfg: &KernelConfig, input_dim: usize) -> usize {
    let mapped = if cfg.kind.is_random_features() {
        cfg.rff_dim
    } else {
        input_dim
    };
    if cfg.concat_original {
        mapped + input_dim
    } else {
        mapped
    }
}

/// Frozen random Fourier features: `sqrt(2/D) cos(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatures {
    /// Row-major `rff_dim x input_dim`.
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
}

impl RandomFeatures {
    fn draw(cfg: &KernelConfig, input_dim: usize) -> Self {
        let mut rng = rng::stream(cfg.rff_seed, &[tag::RFF, input_dim as u64]);
        let n = cfg.rff_dim * input_dim;
        let frequencies: Vec<f64> = match cfg.kind {
            // exp(-gamma |x-y|^2) has spectral density N(0, 2 gamma I)
            KernelKind::RbfRff => {
                let normal = Normal::new(0.0, (2.0 * cfg.gamma).sqrt()).expect("validated gamma");
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            }
            // exp(-gamma |x-y|_1) factorizes into Cauchy(0, gamma) per coordinate
            KernelKind::LaplacianRff => {
                let cauchy = Cauchy::new(0.0, cfg.gamma).expect("validated gamma");
                (0..n).map(|_| cauchy.sample(&mut rng)).collect()
            }
            _ => unreachable!("random features only for RFF kernels"),
        };
        let phases = (0..cfg.rff_dim).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
        RandomFeatures { frequencies, phases }
    }
}

/// A kernel config bound to an input dimension, with any random features
/// already materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    config: KernelConfig,
    input_dim: usize,
    rff: Option<RandomFeatures>,
}

impl FeatureMap {
    pub fn new(config: KernelConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::EmptyVector);
        }
        let rff = config
            .kind
            .is_random_features()
            .then(|| RandomFeatures::draw(&config, input_dim));
        Ok(FeatureMap {
            config,
            input_dim,
            rff,
        })
    }

    /// Rebuild from persisted parts; the frequencies are taken as stored.
    pub fn from_parts(config: KernelConfig, input_dim: usize, rff: Option<RandomFeatures>) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::EmptyVector);
        }
        match (&rff, config.kind.is_random_features()) {
            (Some(r), true) => {
                if r.frequencies.len() != config.rff_dim * input_dim || r.phases.len() != config.rff_dim {
                    return Err(Error::Header("random feature payload has the wrong shape".into()));
                }
            }
            (None, false) => {}
            _ => return Err(Error::Header("random features present for a non-RFF kernel or missing".into())),
        }
        Ok(FeatureMap {
            config,
            input_dim,
            rff,
        })
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        output_dim(&self.config, self.input_dim)
    }

    pub fn random_features(&self) -> Option<&RandomFeatures> {
        self.rff.as_ref()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.input_dim,
                found: x.len(),
            });
        }
        let mut out = Vec::with_capacity(self.output_dim());
        match self.config.kind {
            KernelKind::Squared => out.extend(x.iter().map(|v| v * v)),
            KernelKind::Linear => out.extend_from_slice(x),
            KernelKind::Sigmoid => out.extend(x.iter().map(|v| (self.config.scale * v).tanh())),
            KernelKind::RbfRff | KernelKind::LaplacianRff => {
                let rff = self.rff.as_ref().expect("RFF kernels carry frequencies");
                let norm = (2.0 / self.config.rff_dim as f64).sqrt();
                for (row, phase) in rff.frequencies.chunks_exact(self.input_dim).zip(&rff.phases) {
                    let proj: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
                    out.push(norm * (proj + phase).cos());
                }
            }
        }
        if self.config.concat_original {
            out.extend_from_slice(x);
        }
        Ok(out)
    }
}

/// Map a single vector. Builds the feature map on every call; hold a
/// [`FeatureMap`] when mapping many vectors.
pub fn kernel_map(x: &[f64], cfg: &KernelConfig) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptyVector);
    }
    FeatureMap::new(cfg.clone(), x.len())?.apply(x)
}
