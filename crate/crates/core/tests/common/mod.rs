//! Independent reference computations shared by the oracle and acceptance
//! tests. Nothing here calls into the code under test except to read shapes
//! and parameters.

#![allow(dead_code)]

use kdrop_core::bayes::DropoutHead;
use kdrop_core::data_io::EmbeddingDataset;

/// Normalized density of the Beta–Bernoulli posterior by brute force:
/// prior × likelihood evaluated in log space on a grid of `n` intervals and
/// normalized with composite Simpson. The grid is uniform in `t` with
/// `p = (1 - cos πt)/2`, which smooths the endpoint behaviour of
/// `p^(a-1)` for shapes near 1. Returns `(p, density)` at interior nodes.
pub fn grid_posterior(alpha: f64, beta: f64, keep: u64, drop: u64, n: usize) -> Vec<(f64, f64)> {
    assert!(n % 2 == 0);
    let (a, b) = (alpha + keep as f64, beta + drop as f64);
    assert!(a >= 1.0 && b >= 1.0, "grid oracle needs integrable endpoints");
    let log_unnorm = |p: f64| (alpha - 1.0) * p.ln() + (beta - 1.0) * (1.0 - p).ln() + keep as f64 * p.ln() + drop as f64 * (1.0 - p).ln();
    let pi = std::f64::consts::PI;
    let h = 1.0 / n as f64;
    let nodes: Vec<(f64, f64)> = (1..n)
        .map(|j| {
            let t = j as f64 * h;
            ((1.0 - (pi * t).cos()) / 2.0, pi / 2.0 * (pi * t).sin())
        })
        .collect();
    let logs: Vec<f64> = nodes.iter().map(|&(p, _)| log_unnorm(p)).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (j, (&l, &(_, jac))) in logs.iter().zip(&nodes).enumerate() {
        let w = if j % 2 == 0 { 4.0 } else { 2.0 };
        z += w * (l - top).exp() * jac;
    }
    // the Jacobian vanishes at t = 0 and t = 1, so the end nodes contribute 0
    let log_z = (z * h / 3.0).ln() + top;
    nodes.iter().zip(&logs).map(|(&(p, _), &l)| (p, (l - log_z).exp())).collect()
}

/// Probability of each mask pattern produced by "draw i.i.d. Bernoulli(p);
/// redraw an all-zero mask, `draws` draws in total; then switch on one
/// uniformly chosen unit".
pub fn guarded_mask_weights(p: f64, dim: usize, draws: u32) -> Vec<(Vec<bool>, f64)> {
    let zero = (1.0 - p).powi(dim as i32);
    let stuck = zero.powi(draws as i32);
    // sum of zero^r for r < draws
    let reach: f64 = (0..draws).map(|r| zero.powi(r as i32)).sum();
    (1u32..(1 << dim))
        .map(|bits| {
            let mask: Vec<bool> = (0..dim).map(|j| bits >> j & 1 == 1).collect();
            let k = mask.iter().filter(|&&m| m).count() as i32;
            let direct = p.powi(k) * (1.0 - p).powi(dim as i32 - k);
            let forced = if k == 1 { stuck / dim as f64 } else { 0.0 };
            (mask, reach * direct + forced)
        })
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Exact predictive mean of a single-layer head with fixed keep probability,
/// by enumerating every guarded mask on the mapped input `phi`.
pub fn enumerate_single_layer(head: &DropoutHead, phi: &[f64], p: f64, draws: u32) -> Vec<f64> {
    assert_eq!(head.layers.len(), 1);
    let l = &head.layers[0];
    let scale = 1.0 / (l.in_dim as f64).sqrt();
    let mut out = vec![0.0; l.out_dim];
    for (mask, w) in guarded_mask_weights(p, l.in_dim, draws) {
        let logits: Vec<f64> = (0..l.out_dim)
            .map(|c| {
                let dot: f64 = (0..l.in_dim)
                    .map(|j| if mask[j] { l.weights[c * l.in_dim + j] * phi[j] } else { 0.0 })
                    .sum();
                scale * dot + l.bias[c]
            })
            .collect();
        for (o, q) in out.iter_mut().zip(softmax(&logits)) {
            *o += w * q;
        }
    }
    out
}

/// Plain binary logistic regression fitted by full-batch gradient descent;
/// returns accuracy on `test`.
pub fn logistic_regression_accuracy(train: &EmbeddingDataset, test: &EmbeddingDataset) -> f64 {
    let d = train.dim;
    let mut w = vec![0.0; d + 1];
    let n = train.len() as f64;
    for _ in 0..2000 {
        let mut g = vec![0.0; d + 1];
        for inst in &train.instances {
            let z: f64 = w[d] + inst.vector.iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>();
            let r = 1.0 / (1.0 + (-z).exp()) - inst.label as f64;
            for j in 0..d {
                g[j] += r * inst.vector[j] / n;
            }
            g[d] += r / n;
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= 0.5 * gi;
        }
    }
    let correct = test
        .instances
        .iter()
        .filter(|inst| {
            let z: f64 = w[d] + inst.vector.iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>();
            usize::from(z > 0.0) == inst.label
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}
