//! Monte Carlo dropout with Beta-distributed keep probabilities.
//!
//! Each layer `i` owns a keep probability `p_i ~ Beta(alpha, beta)`. A
//! stochastic pass draws one `p_i` per layer, a Bernoulli mask over the layer
//! inputs, and evaluates
//!
//! ```text
//! h_i = relu( (1/sqrt(r_{i-1})) * M_i (z_i ⊙ h_{i-1}) + b_i ),   h_0 = κ(x)
//! ```
//!
//! with the last layer producing logits that go through softmax. Averaging the
//! per-pass class probabilities over `T` passes gives the predictive mean.
//!
//! Masks observed while training are Bernoulli outcomes for `p_i`, so the
//! posterior stays `Beta(alpha + kept, beta + dropped)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::kernels::{FeatureMap, KernelConfig};
use crate::rng::{self, tag};

/// Redraws allowed before the all-zero guard forces a unit on.
pub const MASK_REDRAWS: usize = 10;

pub const DEFAULT_MC_PASSES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaState {
    pub alpha: f64,
    pub beta: f64,
    pub keep_count: u64,
    pub drop_count: u64,
}

impl BetaState {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!(
                "Beta parameters must be positive and finite, got ({alpha}, {beta})"
            )));
        }
        Ok(BetaState {
            alpha,
            beta,
            keep_count: 0,
            drop_count: 0,
        })
    }

    /// `(alpha + kept, beta + dropped)`.
    pub fn posterior(&self) -> (f64, f64) {
        (
            self.alpha + self.keep_count as f64,
            self.beta + self.drop_count as f64,
        )
    }

    pub fn posterior_mean(&self) -> f64 {
        let (a, b) = self.posterior();
        a / (a + b)
    }

    /// Log density of `Beta(a, b)` at `p` for the prior or the posterior.
    pub fn ln_pdf(&self, p: f64, use_posterior: bool) -> f64 {
        let (a, b) = if use_posterior {
            self.posterior()
        } else {
            (self.alpha, self.beta)
        };
        if !(0.0..=1.0).contains(&p) {
            return f64::NEG_INFINITY;
        }
        let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
        ln_norm + (a - 1.0) * p.ln() + (b - 1.0) * (1.0 - p).ln()
    }
}

/// ln of a Gamma(shape, 1) variate, stable for very small shapes.
///
/// For `shape < 1` uses `G(shape) = G(shape + 1) * U^(1/shape)`, which in log
/// space avoids the underflow that makes `Beta(1e-4, 1e-4)` draws collapse to
/// `0/0`.
fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("positive shape");
        g.sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape");
        let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        g.sample(rng).ln() + u.ln() / shape
    }
}

/// Draw from `Beta(a, b)` as `Ga / (Ga + Gb)`, computed from log variates.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let la = ln_gamma_variate(a, rng);
    let lb = ln_gamma_variate(b, rng);
    // Ga / (Ga + Gb) = 1 / (1 + exp(lb - la))
    let d = lb - la;
    if d > 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

pub fn sample_keep_prob<R: Rng + ?Sized>(state: &BetaState, rng: &mut R, use_posterior: bool) -> f64 {
    let (a, b) = if use_posterior {
        state.posterior()
    } else {
        (state.alpha, state.beta)
    };
    sample_beta(a, b, rng)
}

/// I.i.d. Bernoulli(p) mask of length `dim`, never all zero.
///
/// An all-zero draw is redrawn up to [`MASK_REDRAWS`] times; after that one
/// uniformly chosen unit is switched on.
pub fn sample_mask<R: Rng + ?Sized>(p: f64, dim: usize, rng: &mut R) -> Vec<bool> {
    assert!(dim >= 1, "mask dimension must be positive");
    let mut mask = vec![false; dim];
    for _ in 0..=MASK_REDRAWS {
        let mut any = false;
        for m in mask.iter_mut() {
            *m = rng.random::<f64>() < p;
            any |= *m;
        }
        if any {
            return mask;
        }
    }
    mask[rng.random_range(0..dim)] = true;
    mask
}

/// Fold observed masks into the counts. The prior `(alpha, beta)` is kept; the
/// posterior is read back through [`BetaState::posterior`].
pub fn beta_posterior_update(state: &BetaState, masks_observed: &[Vec<bool>]) -> Result<BetaState> {
    if masks_observed.is_empty() {
        return Err(Error::EmptyMaskSet);
    }
    let mut next = *state;
    for mask in masks_observed {
        let kept = mask.iter().filter(|&&m| m).count() as u64;
        next.keep_count += kept;
        next.drop_count += mask.len() as u64 - kept;
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    #[default]
    ReLU,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::ReLU => v.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One affine layer with its own keep-probability prior.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub beta_state: BetaState,
    /// When set, the keep probability is this constant and the Beta state is
    /// ignored (fixed-rate MC dropout).
    pub fixed_keep_prob: Option<f64>,
}

impl LayerSpec {
    #[inline]
    pub fn scale(&self) -> f64 {
        1.0 / (self.in_dim as f64).sqrt()
    }

    pub fn keep_prob<R: Rng + ?Sized>(&self, rng: &mut R, use_posterior: bool) -> f64 {
        match self.fixed_keep_prob {
            Some(p) => p,
            None => sample_keep_prob(&self.beta_state, rng, use_posterior),
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!("layer {index} has a zero dimension")));
        }
        if self.weights.len() != self.in_dim * self.out_dim {
            return Err(Error::DimensionMismatch {
                layer: index,
                expected: self.in_dim * self.out_dim,
                found: self.weights.len(),
            });
        }
        if self.bias.len() != self.out_dim {
            return Err(Error::DimensionMismatch {
                layer: index,
                expected: self.out_dim,
                found: self.bias.len(),
            });
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("layer {index} has non-finite parameters")));
        }
        if let Some(p) = self.fixed_keep_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("layer {index} keep probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Where each layer's keep probability comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepPrior {
    Beta { alpha: f64, beta: f64 },
    Fixed(f64),
}

impl Default for KeepPrior {
    fn default() -> Self {
        KeepPrior::Beta {
            alpha: 1e-4,
            beta: 1e-4,
        }
    }
}

/// Shape and initialization settings for a fresh head.
#[derive(Debug, Clone)]
pub struct HeadSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub kernel: KernelConfig,
    pub prior: KeepPrior,
    pub tau: f64,
    pub l2: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutHead {
    pub layers: Vec<LayerSpec>,
    pub feature_map: FeatureMap,
    pub num_classes: usize,
    pub tau: f64,
    pub l2: f64,
    pub activation: Activation,
    pub seed: u64,
}

impl DropoutHead {
    /// Weights are uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn new(spec: &HeadSpec) -> Result<Self> {
        if spec.num_classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        if spec.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(spec.tau > 0.0) {
            return Err(Error::InvalidTau(spec.tau));
        }
        if !(spec.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 must be nonnegative, got {}", spec.l2)));
        }
        let feature_map = FeatureMap::new(spec.kernel.clone(), spec.input_dim)?;
        let (beta_state, fixed) = match spec.prior {
            KeepPrior::Beta { alpha, beta } => (BetaState::new(alpha, beta)?, None),
            KeepPrior::Fixed(p) => (BetaState::new(1.0, 1.0)?, Some(p)),
        };
        let mut dims = vec![feature_map.output_dim()];
        dims.extend(&spec.hidden);
        dims.push(spec.num_classes);

        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let mut r = rng::stream(spec.seed, &[tag::INIT, i as u64]);
                let bound = 1.0 / (in_dim as f64).sqrt();
                LayerSpec {
                    in_dim,
                    out_dim,
                    weights: (0..in_dim * out_dim)
                        .map(|_| r.random_range(-bound..bound))
                        .collect(),
                    bias: vec![0.0; out_dim],
                    beta_state,
                    fixed_keep_prob: fixed,
                }
            })
            .collect();

        let head = DropoutHead {
            layers,
            feature_map,
            num_classes: spec.num_classes,
            tau: spec.tau,
            l2: spec.l2,
            activation: Activation::ReLU,
            seed: spec.seed,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn kernel(&self) -> &KernelConfig {
        self.feature_map.config()
    }

    pub fn input_dim(&self) -> usize {
        self.feature_map.input_dim()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Check the layer chain and parameter shapes.
    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::Config("head has no layers".into()));
        };
        let mut expected = self.feature_map.output_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.in_dim != expected {
                return Err(Error::DimensionMismatch {
                    layer: i,
                    expected,
                    found: layer.in_dim,
                });
            }
            layer.validate(i)?;
            expected = layer.out_dim;
        }
        if last.out_dim != self.num_classes {
            return Err(Error::DimensionMismatch {
                layer: self.layers.len() - 1,
                expected: self.num_classes,
                found: last.out_dim,
            });
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidTau(self.tau));
        }
        Ok(())
    }

    /// Draw one keep probability per layer and a guarded mask for each.
    pub fn sample_masks<R: Rng + ?Sized>(&self, rng: &mut R, use_posterior: bool) -> Vec<Vec<bool>> {
        self.layers
            .iter()
            .map(|layer| {
                let p = layer.keep_prob(rng, use_posterior);
                sample_mask(p, layer.in_dim, rng)
            })
            .collect()
    }

    pub fn all_ones_masks(&self) -> Vec<Vec<bool>> {
        self.layers.iter().map(|l| vec![true; l.in_dim]).collect()
    }
}

/// Intermediate values from one pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct PassCache {
    /// Masked input of each layer, `z_i ⊙ h_{i-1}`.
    pub masked_inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pub pre_activations: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn forward_cached(head: &DropoutHead, phi_x: &[f64], masks: &[Vec<bool>]) -> Result<PassCache> {
    if masks.len() != head.layers.len() {
        return Err(Error::DimensionMismatch {
            layer: masks.len().min(head.layers.len()),
            expected: head.layers.len(),
            found: masks.len(),
        });
    }
    let last = head.layers.len() - 1;
    let mut masked_inputs = Vec::with_capacity(head.layers.len());
    let mut pre_activations = Vec::with_capacity(head.layers.len());
    let mut h: Vec<f64> = phi_x.to_vec();
    for (i, (layer, mask)) in head.layers.iter().zip(masks).enumerate() {
        if h.len() != layer.in_dim {
            return Err(Error::DimensionMismatch {
                layer: i,
                expected: layer.in_dim,
                found: h.len(),
            });
        }
        if mask.len() != layer.in_dim {
            return Err(Error::DimensionMismatch {
                layer: i,
                expected: layer.in_dim,
                found: mask.len(),
            });
        }
        let zin: Vec<f64> = h.iter().zip(mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect();
        let scale = layer.scale();
        let pre: Vec<f64> = layer
            .weights
            .chunks_exact(layer.in_dim)
            .zip(&layer.bias)
            .map(|(row, b)| scale * row.iter().zip(&zin).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect();
        h = if i == last {
            pre.clone()
        } else {
            pre.iter().map(|&v| head.activation.apply(v)).collect()
        };
        masked_inputs.push(zin);
        pre_activations.push(pre);
    }
    let probs = softmax(&h);
    Ok(PassCache {
        masked_inputs,
        pre_activations,
        probs,
    })
}

/// One stochastic pass on an already-mapped input with fixed masks.
pub fn forward_stochastic(head: &DropoutHead, phi_x: &[f64], masks: &[Vec<bool>]) -> Result<ForwardOutput> {
    let mut cache = forward_cached(head, phi_x, masks)?;
    Ok(ForwardOutput {
        logits: cache.pre_activations.pop().expect("at least one layer"),
        probs: cache.probs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mean_probs: Vec<f64>,
    /// Unbiased per-class variance across passes (zero when `T = 1`).
    pub sample_variance: Vec<f64>,
    /// `sample_variance + 1/tau`.
    pub predictive_variance: Vec<f64>,
    pub num_passes: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_pass_probs: Option<Vec<Vec<f64>>>,
}

impl PredictiveSummary {
    pub fn from_passes(passes: Vec<Vec<f64>>, tau: f64, keep_passes: bool) -> Result<Self> {
        let t = passes.len();
        if t == 0 {
            return Err(Error::Config("at least one pass is required".into()));
        }
        let k = passes[0].len();
        let mut mean = vec![0.0; k];
        for row in &passes {
            for (m, p) in mean.iter_mut().zip(row) {
                *m += p;
            }
        }
        mean.iter_mut().for_each(|m| *m /= t as f64);
        let mut var = vec![0.0; k];
        if t > 1 {
            for row in &passes {
                for ((v, p), m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += (p - m).powi(2);
                }
            }
            var.iter_mut().for_each(|v| *v /= (t - 1) as f64);
        }
        let mut summary = PredictiveSummary {
            mean_probs: mean,
            sample_variance: var,
            predictive_variance: Vec::new(),
            num_passes: t,
            per_pass_probs: keep_passes.then_some(passes),
        };
        summary.predictive_variance = predictive_variance(&summary, tau)?;
        Ok(summary)
    }
}

pub fn predictive_variance(summary: &PredictiveSummary, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidTau(tau));
    }
    let floor = 1.0 / tau;
    Ok(summary.sample_variance.iter().map(|v| v + floor).collect())
}

pub(crate) fn mc_passes<R: Rng + ?Sized>(
    head: &DropoutHead,
    phi: &[f64],
    passes: usize,
    rng: &mut R,
    use_posterior: bool,
) -> Result<Vec<Vec<f64>>> {
    if passes == 0 {
        return Err(Error::Config("number of MC passes must be at least 1".into()));
    }
    (0..passes)
        .map(|_| {
            let masks = head.sample_masks(rng, use_posterior);
            Ok(forward_cached(head, phi, &masks)?.probs)
        })
        .collect()
}

/// Monte Carlo predictive estimate for one raw embedding `x`.
pub fn predict_mc<R: Rng + ?Sized>(
    head: &DropoutHead,
    x: &[f64],
    passes: usize,
    rng: &mut R,
    use_posterior: bool,
) -> Result<PredictiveSummary> {
    let phi = head.feature_map.apply(x)?;
    let probs = mc_passes(head, &phi, passes, rng, use_posterior)?;
    PredictiveSummary::from_passes(probs, head.tau, true)
}

/// Predict many instances in parallel. Instance `i` always uses the stream
/// keyed by `(seed, i)`, so output is identical for any thread count.
pub fn predict_batch(
    head: &DropoutHead,
    xs: &[Vec<f64>],
    passes: usize,
    seed: u64,
    use_posterior: bool,
) -> Result<Vec<PredictiveSummary>> {
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut r = rng::stream(seed, &[tag::PREDICT, i as u64]);
            let phi = head.feature_map.apply(x)?;
            let probs = mc_passes(head, &phi, passes, &mut r, use_posterior)?;
            PredictiveSummary::from_passes(probs, head.tau, false)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelConfig;
    use proptest::prelude::*;

    fn identity_head(weights: Vec<f64>, in_dim: usize, out_dim: usize) -> DropoutHead {
        DropoutHead {
            layers: vec![LayerSpec {
                in_dim,
                out_dim,
                weights,
                bias: vec![0.0; out_dim],
                beta_state: BetaState::new(1.0, 1.0).unwrap(),
                fixed_keep_prob: None,
            }],
            feature_map: FeatureMap::new(KernelConfig::linear(), in_dim).unwrap(),
            num_classes: out_dim,
            tau: 1.0,
            l2: 0.0,
            activation: Activation::ReLU,
            seed: 0,
        }
    }

    fn spec(hidden: Vec<usize>, prior: KeepPrior) -> HeadSpec {
        HeadSpec {
            input_dim: 5,
            hidden,
            num_classes: 3,
            kernel: KernelConfig::squared(),
            prior,
            tau: 2.0,
            l2: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn uniform_prior_mean() {
        let s = BetaState::new(1.0, 1.0).unwrap();
        let mut r = rng::stream(1, &[]);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_keep_prob(&s, &mut r, false)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn posterior_draws_center_on_counts() {
        let s = BetaState {
            keep_count: 7000,
            drop_count: 3000,
            ..BetaState::new(1e-4, 1e-4).unwrap()
        };
        let mut r = rng::stream(2, &[]);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_keep_prob(&s, &mut r, true)).sum::<f64>() / n as f64;
        assert!((mean - 0.7).abs() < 0.01, "{mean}");
    }

    #[test]
    fn tiny_shapes_never_produce_nan() {
        let mut r = rng::stream(3, &[]);
        for _ in 0..10_000 {
            let p = sample_beta(1e-4, 1e-4, &mut r);
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn mask_extremes() {
        let mut r = rng::stream(4, &[]);
        assert_eq!(sample_mask(1.0, 5, &mut r), vec![true; 5]);
        for _ in 0..100 {
            let m = sample_mask(0.0, 5, &mut r);
            assert_eq!(m.iter().filter(|&&v| v).count(), 1);
        }
    }

    #[test]
    fn mask_rate_within_binomial_band() {
        let mut r = rng::stream(5, &[]);
        let m = sample_mask(0.3, 1000, &mut r);
        let frac = m.iter().filter(|&&v| v).count() as f64 / 1000.0;
        let se = (0.3f64 * 0.7 / 1000.0).sqrt();
        assert!((frac - 0.3).abs() <= 3.0 * se, "{frac}");
    }

    #[test]
    fn posterior_update_counts_masks() {
        let s = BetaState::new(1.0, 1.0).unwrap();
        let next = beta_posterior_update(&s, &[vec![true, true, false]]).unwrap();
        assert_eq!(next.posterior(), (3.0, 2.0));
        assert_eq!((next.alpha, next.beta), (1.0, 1.0));

        let s = BetaState::new(1e-4, 1e-4).unwrap();
        let masks = vec![[vec![true; 7], vec![false; 3]].concat()];
        let (a, b) = beta_posterior_update(&s, &masks).unwrap().posterior();
        assert!((a - 7.0001).abs() < 1e-12 && (b - 3.0001).abs() < 1e-12);

        assert!(matches!(beta_posterior_update(&s, &[]), Err(Error::EmptyMaskSet)));
    }

    #[test]
    fn equal_logits_give_even_split() {
        let head = identity_head(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let out = forward_stochastic(&head, &[0.0, 0.0], &[vec![true, true]]).unwrap();
        assert_eq!(out.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn scaled_masked_layer_by_hand() {
        let head = identity_head(vec![2.0, 0.0, 0.0, 2.0], 2, 2);
        let out = forward_stochastic(&head, &[3.0, 1.0], &[vec![true, false]]).unwrap();
        let l0 = 6.0 / 2f64.sqrt();
        assert!((out.logits[0] - l0).abs() < 1e-12);
        assert_eq!(out.logits[1], 0.0);
        let e = l0.exp();
        assert!((out.probs[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((out.probs[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn dimension_errors_name_the_layer() {
        let head = DropoutHead::new(&spec(vec![4], KeepPrior::default())).unwrap();
        let phi = vec![0.0; head.layers[0].in_dim];
        let mut masks = head.all_ones_masks();
        masks[1].pop();
        assert!(matches!(
            forward_stochastic(&head, &phi, &masks),
            Err(Error::DimensionMismatch { layer: 1, .. })
        ));
        assert!(matches!(
            forward_stochastic(&head, &phi[1..], &head.all_ones_masks()),
            Err(Error::DimensionMismatch { layer: 0, .. })
        ));
    }

    #[test]
    fn all_ones_masks_are_deterministic() {
        let head = DropoutHead::new(&spec(vec![4, 3], KeepPrior::default())).unwrap();
        let phi = head.feature_map.apply(&[0.3, -1.0, 2.0, 0.1, 0.0]).unwrap();
        let a = forward_stochastic(&head, &phi, &head.all_ones_masks()).unwrap();
        let b = forward_stochastic(&head, &phi, &head.all_ones_masks()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_keep_prob_removes_noise() {
        let mut head = DropoutHead::new(&spec(vec![6], KeepPrior::default())).unwrap();
        for l in &mut head.layers {
            l.beta_state.keep_count = 1_000_000_000;
        }
        let mut r = rng::stream(6, &[]);
        let s = predict_mc(&head, &[1.0, 0.5, -0.2, 0.0, 2.0], 40, &mut r, true).unwrap();
        assert!(s.sample_variance.iter().all(|&v| v <= 1e-12));
        let passes = s.per_pass_probs.as_ref().unwrap();
        assert!(passes.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn single_pass_mean_is_that_pass() {
        let head = DropoutHead::new(&spec(vec![], KeepPrior::default())).unwrap();
        let mut r = rng::stream(7, &[]);
        let s = predict_mc(&head, &[1.0, 0.5, -0.2, 0.0, 2.0], 1, &mut r, false).unwrap();
        assert_eq!(s.mean_probs, s.per_pass_probs.as_ref().unwrap()[0]);
        assert_eq!(s.sample_variance, vec![0.0; 3]);
        assert_eq!(s.predictive_variance, vec![0.5; 3]);
    }

    #[test]
    fn predictive_variance_floor() {
        let s = |v: Vec<f64>| PredictiveSummary {
            mean_probs: vec![0.5; v.len()],
            sample_variance: v,
            predictive_variance: vec![],
            num_passes: 2,
            per_pass_probs: None,
        };
        assert_eq!(predictive_variance(&s(vec![0.0, 0.0]), 10.0).unwrap(), vec![0.1, 0.1]);
        let v = predictive_variance(&s(vec![0.02]), 4.0).unwrap();
        assert!((v[0] - 0.27).abs() < 1e-15);
        let v = predictive_variance(&s(vec![0.3, 0.01]), 1e12).unwrap();
        assert!((v[0] - 0.3).abs() < 1e-11 && (v[1] - 0.01).abs() < 1e-11);
        assert!(matches!(predictive_variance(&s(vec![0.0]), 0.0), Err(Error::InvalidTau(_))));
        assert!(matches!(predictive_variance(&s(vec![0.0]), -1.0), Err(Error::InvalidTau(_))));
    }

    #[test]
    fn fixed_keep_prob_overrides_beta() {
        let head = DropoutHead::new(&spec(vec![8], KeepPrior::Fixed(1.0))).unwrap();
        let mut r = rng::stream(8, &[]);
        let masks = head.sample_masks(&mut r, false);
        assert!(masks.iter().all(|m| m.iter().all(|&v| v)));
    }

    #[test]
    fn batch_prediction_ignores_thread_count() {
        let head = DropoutHead::new(&spec(vec![6], KeepPrior::default())).unwrap();
        let xs: Vec<Vec<f64>> = (0..32).map(|i| (0..5).map(|j| ((i * 5 + j) as f64).sin()).collect()).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| predict_batch(&head, &xs, 20, 99, false).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    proptest! {
        #[test]
        fn probabilities_are_normalized(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 5)) {
            let mut sp = spec(vec![4], KeepPrior::default());
            sp.seed = seed;
            let head = DropoutHead::new(&sp).unwrap();
            let mut r = rng::stream(seed, &[42]);
            let s = predict_mc(&head, &x, 8, &mut r, false).unwrap();
            for row in s.per_pass_probs.as_ref().unwrap() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            }
            prop_assert!((s.mean_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (pv, sv) in s.predictive_variance.iter().zip(&s.sample_variance) {
                prop_assert_eq!(*pv, sv + 1.0 / head.tau);
            }
        }

        #[test]
        fn same_seed_same_summary(seed in any::<u64>()) {
            let head = DropoutHead::new(&spec(vec![3], KeepPrior::default())).unwrap();
            let x = [0.2, 0.4, -1.0, 0.0, 1.0];
            let a = predict_mc(&head, &x, 10, &mut rng::stream(seed, &[]), false).unwrap();
            let b = predict_mc(&head, &x, 10, &mut rng::stream(seed, &[]), false).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
