//! Synthetic embedding datasets for tests, demos and acceptance runs.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_io::{EmbeddingDataset, Instance};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::training::splits::shuffle;

/// Isotropic Gaussian clusters, one per class, with balanced labels.
///
/// For two classes the centers sit at `±(separation/2)·σ·u` with `u` the unit
/// diagonal, so they are symmetric about the origin. For more classes center
/// `k` is `(separation/√2)·σ·e_k`, which keeps every pair `separation·σ`
/// apart. Values are rounded through `f32` so an EMBF round trip is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSpec {
    pub n: usize,
    pub dim: usize,
    pub num_classes: usize,
    /// Distance between centers in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            n: 200,
            dim: 8,
            num_classes: 2,
            separation: 4.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

fn class_names(k: usize) -> Vec<String> {
    (0..k).map(|c| format!("class_{c}")).collect()
}

/// Labels `i mod K`, shuffled.
fn balanced_labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    shuffle(&mut labels, &mut rng::stream(seed, &[tag::SYNTH, 0]));
    labels
}

pub fn gaussian_clusters(spec: &ClusterSpec) -> Result<EmbeddingDataset> {
    let ClusterSpec {
        n,
        dim,
        num_classes: k,
        separation,
        sigma,
        seed,
    } = *spec;
    if k < 2 || dim == 0 {
        return Err(Error::Config("clusters need at least two classes and a positive dimension".into()));
    }
    if k > 2 && dim < k {
        return Err(Error::Config(format!("{k} orthogonal centers need dim >= {k}, got {dim}")));
    }
    if !(sigma > 0.0) || !(separation >= 0.0) {
        return Err(Error::Config("sigma must be positive and separation nonnegative".into()));
    }
    let centers: Vec<Vec<f64>> = if k == 2 {
        let a = separation * sigma / 2.0 / (dim as f64).sqrt();
        vec![vec![-a; dim], vec![a; dim]]
    } else {
        let a = separation * sigma / 2f64.sqrt();
        (0..k)
            .map(|c| (0..dim).map(|j| if j == c { a } else { 0.0 }).collect())
            .collect()
    };
    let labels = balanced_labels(n, k, seed);
    let noise = Normal::new(0.0, sigma).expect("positive sigma");
    let mut r = rng::stream(seed, &[tag::SYNTH, 1]);
    let mut ds = EmbeddingDataset::new(format!("clusters-k{k}-d{dim}-sep{separation}"), dim, class_names(k));
    ds.instances = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| Instance {
            id: format!("x{i:05}"),
            vector: centers[label]
                .iter()
                .map(|&c| (c + noise.sample(&mut r)) as f32 as f64)
                .collect(),
            label,
        })
        .collect();
    ds.metadata.insert("generator".into(), serde_json::to_value(spec)?);
    Ok(ds)
}

/// Standard normal features with balanced labels drawn independently of them.
pub fn label_noise(n: usize, dim: usize, num_classes: usize, seed: u64) -> Result<EmbeddingDataset> {
    if num_classes < 2 || dim == 0 {
        return Err(Error::Config("need at least two classes and a positive dimension".into()));
    }
    let labels = balanced_labels(n, num_classes, seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut r = rng::stream(seed, &[tag::SYNTH, 2]);
    let mut ds = EmbeddingDataset::new(format!("noise-k{num_classes}-d{dim}"), dim, class_names(num_classes));
    ds.instances = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| Instance {
            id: format!("x{i:05}"),
            vector: (0..dim).map(|_| noise.sample(&mut r) as f32 as f64).collect(),
            label,
        })
        .collect();
    Ok(ds)
}
