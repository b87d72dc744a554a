//! Fitting a [`DropoutHead`]: masked cross-entropy with an L2 penalty on the
//! weight matrices, Adam updates, and early stopping on an MC validation loss.

mod adam;
pub mod splits;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bayes::{self, forward_cached, DropoutHead};
use crate::data_io::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub use adam::Adam;
pub use splits::{make_splits, Split, SplitMode, SplitPlan};

/// Below this many training instances no validation set is held out.
pub const MIN_EARLY_STOP_INSTANCES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub mc_passes_eval: usize,
    /// Draw keep probabilities from the running posterior and fold every
    /// training mask into the layer's Beta counts. When false, keep
    /// probabilities come from the prior and the counts are left alone.
    pub posterior_updates: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            adam_epsilon: 1e-8,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            l2: 1e-4,
            batch_size: 16,
            early_stop_patience: 10,
            validation_fraction: 0.1,
            seed: 0,
            mc_passes_eval: bayes::DEFAULT_MC_PASSES,
            posterior_updates: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.adam_epsilon > 0.0) {
            return bad(format!("adam_epsilon must be positive, got {}", self.adam_epsilon));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.l2 >= 0.0) {
            return bad(format!("l2 must be nonnegative, got {}", self.l2));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction must lie in [0, 1), got {}", self.validation_fraction));
        }
        if self.mc_passes_eval == 0 {
            return bad("mc_passes_eval must be positive".into());
        }
        // zero epochs is a no-op, so patience is moot there
        if self.epochs > 0 && self.early_stop_patience > self.epochs {
            return bad(format!(
                "early_stop_patience {} exceeds epochs {}",
                self.early_stop_patience, self.epochs
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Masked training loss before the first update.
    pub initial_train_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Epoch whose weights were returned (1-based), when validation was used.
    pub best_epoch: Option<usize>,
    pub train_size: usize,
    pub validation_size: usize,
}

impl TrainTrace {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// `epoch,train_loss,val_loss,stopped_early`; the flag is set on the
    /// epoch that triggered the stop.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,stopped_early\n");
        let last = self.epochs.len();
        for (i, e) in self.epochs.iter().enumerate() {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            let flag = u8::from(self.stopped_early && i + 1 == last);
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, val, flag);
        }
        out
    }
}

/// Mapped features `κ(x)` with labels.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Map raw vectors through the head's kernel.
    pub fn from_raw(head: &DropoutHead, vectors: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        let features = vectors
            .iter()
            .map(|x| head.feature_map.apply(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            features,
            labels: labels.to_vec(),
        })
    }
}

/// Per-sample, per-layer masks.
pub type BatchMasks = Vec<Vec<Vec<bool>>>;

fn check_batch(head: &DropoutHead, batch: &Batch, masks: &[Vec<Vec<bool>>]) -> Result<()> {
    if batch.features.len() != batch.labels.len() || masks.len() != batch.labels.len() {
        return Err(Error::Config(format!(
            "batch has {} feature rows, {} labels and {} mask sets",
            batch.features.len(),
            batch.labels.len(),
            masks.len()
        )));
    }
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    if let Some((index, &label)) = batch.labels.iter().enumerate().find(|(_, &l)| l >= head.num_classes) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            num_classes: head.num_classes,
        });
    }
    Ok(())
}

fn l2_penalty(head: &DropoutHead) -> f64 {
    head.l2
        * head
            .layers
            .iter()
            .flat_map(|l| &l.weights)
            .map(|w| w * w)
            .sum::<f64>()
}

fn nll(p: f64) -> f64 {
    -p.max(f64::MIN_POSITIVE).ln()
}

/// Mean cross-entropy over the batch plus `l2 * Σ ||M_i||²` (biases excluded).
pub fn loss(head: &DropoutHead, batch: &Batch, masks: &[Vec<Vec<bool>>]) -> Result<f64> {
    check_batch(head, batch, masks)?;
    let mut ce = 0.0;
    for ((phi, &y), m) in batch.features.iter().zip(&batch.labels).zip(masks) {
        ce += nll(forward_cached(head, phi, m)?.probs[y]);
    }
    Ok(ce / batch.len() as f64 + l2_penalty(head))
}

/// Loss and its gradient, flattened as layer 0 weights, layer 0 bias,
/// layer 1 weights, ...
pub fn loss_and_gradient(head: &DropoutHead, batch: &Batch, masks: &[Vec<Vec<bool>>]) -> Result<(f64, Vec<f64>)> {
    check_batch(head, batch, masks)?;
    let n = batch.len() as f64;
    let offsets = param_offsets(head);
    let mut grad = vec![0.0; head.num_parameters()];
    let mut ce = 0.0;
    let last = head.layers.len() - 1;

    for ((phi, &y), m) in batch.features.iter().zip(&batch.labels).zip(masks) {
        let cache = forward_cached(head, phi, m)?;
        ce += nll(cache.probs[y]);
        // d(CE)/d(logits) = p - onehot, averaged over the batch
        let mut delta: Vec<f64> = cache.probs.clone();
        delta[y] -= 1.0;
        delta.iter_mut().for_each(|d| *d /= n);

        for i in (0..=last).rev() {
            let layer = &head.layers[i];
            let scale = layer.scale();
            let zin = &cache.masked_inputs[i];
            let (w_off, b_off) = offsets[i];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[w_off + r * layer.in_dim..w_off + (r + 1) * layer.in_dim];
                for (g, &v) in row.iter_mut().zip(zin) {
                    *g += scale * d * v;
                }
                grad[b_off + r] += d;
            }
            if i == 0 {
                break;
            }
            // back through M_i, the mask and the previous activation
            let prev_pre = &cache.pre_activations[i - 1];
            let mask = &m[i];
            let mut next = vec![0.0; layer.in_dim];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (acc, &w) in next.iter_mut().zip(row) {
                    *acc += scale * w * d;
                }
            }
            for ((acc, &keep), &pre) in next.iter_mut().zip(mask).zip(prev_pre) {
                *acc *= if keep { head.activation.derivative(pre) } else { 0.0 };
            }
            delta = next;
        }
    }

    if head.l2 > 0.0 {
        for (layer, &(w_off, _)) in head.layers.iter().zip(&offsets) {
            for (g, w) in grad[w_off..w_off + layer.weights.len()].iter_mut().zip(&layer.weights) {
                *g += 2.0 * head.l2 * w;
            }
        }
    }
    Ok((ce / n + l2_penalty(head), grad))
}

fn param_offsets(head: &DropoutHead) -> Vec<(usize, usize)> {
    let mut off = 0;
    head.layers
        .iter()
        .map(|l| {
            let w = off;
            let b = w + l.weights.len();
            off = b + l.bias.len();
            (w, b)
        })
        .collect()
}

pub fn flatten_params(head: &DropoutHead) -> Vec<f64> {
    let mut out = Vec::with_capacity(head.num_parameters());
    for l in &head.layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.bias);
    }
    out
}

pub fn set_params(head: &mut DropoutHead, params: &[f64]) {
    let mut it = params.iter().copied();
    for l in &mut head.layers {
        l.weights.iter_mut().for_each(|w| *w = it.next().expect("parameter count"));
        l.bias.iter_mut().for_each(|b| *b = it.next().expect("parameter count"));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub parameters_checked: usize,
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const FINITE_DIFFERENCE_STEP: f64 = 1e-5;

/// Compare analytic gradients with central differences. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps exactly-zero gradients
/// from dividing by zero.
pub fn gradient_check(head: &DropoutHead, batch: &Batch, masks: &[Vec<Vec<bool>>], tolerance: f64) -> Result<GradientReport> {
    let (_, analytic) = loss_and_gradient(head, batch, masks)?;
    let base = flatten_params(head);
    let mut probe = head.clone();
    let mut params = base.clone();
    let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
    for (j, &a) in analytic.iter().enumerate() {
        params[j] = base[j] + FINITE_DIFFERENCE_STEP;
        set_params(&mut probe, &params);
        let up = loss(&probe, batch, masks)?;
        params[j] = base[j] - FINITE_DIFFERENCE_STEP;
        set_params(&mut probe, &params);
        let down = loss(&probe, batch, masks)?;
        params[j] = base[j];
        let numeric = (up - down) / (2.0 * FINITE_DIFFERENCE_STEP);
        let abs = (a - numeric).abs();
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(abs / a.abs().max(numeric.abs()).max(1e-6));
    }
    Ok(GradientReport {
        parameters_checked: analytic.len(),
        max_relative_error: max_rel,
        max_abs_error: max_abs,
        tolerance,
        passed: max_rel <= tolerance,
    })
}

/// Stratified hold-out of about `fraction` of each class.
fn holdout(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        splits::shuffle(&mut idx, &mut rng::stream(seed, &[tag::HOLDOUT, c as u64]));
        let k = (fraction * idx.len() as f64).round() as usize;
        let k = k.min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Cross-entropy of MC-averaged predictions; instance `i` uses the stream
/// keyed by `(seed, i)` every time, so successive epochs are compared on the
/// same random numbers.
fn mc_loss(head: &DropoutHead, features: &[Vec<f64>], labels: &[usize], passes: usize, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for (i, (phi, &y)) in features.iter().zip(labels).enumerate() {
        let mut r = rng::stream(seed, &[tag::VALIDATION, i as u64]);
        let probs = bayes::mc_passes(head, phi, passes, &mut r, true)?;
        let mean = probs.iter().map(|p| p[y]).sum::<f64>() / passes as f64;
        total += nll(mean);
    }
    Ok(total / features.len() as f64)
}

/// Train a copy of `head` on `data`.
///
/// Each step samples masks for every instance of the minibatch, takes an
/// Adam step on the masked loss and (with `posterior_updates`) adds the masks
/// to each layer's Beta counts. When a validation set is held out, the head
/// from the epoch with the lowest validation loss is returned.
pub fn train(head: &DropoutHead, data: &EmbeddingDataset, cfg: &TrainConfig) -> Result<(DropoutHead, TrainTrace)> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok((head.clone(), TrainTrace::default()));
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if data.dim != head.input_dim() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: head.input_dim(),
            found: data.dim,
        });
    }
    let labels = data.labels();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= head.num_classes) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            num_classes: head.num_classes,
        });
    }

    let use_validation = cfg.validation_fraction > 0.0 && data.len() >= MIN_EARLY_STOP_INSTANCES;
    let (train_idx, val_idx) = if use_validation {
        holdout(&labels, cfg.validation_fraction, cfg.seed)
    } else {
        ((0..data.len()).collect(), Vec::new())
    };
    let use_validation = use_validation && !val_idx.is_empty();

    let mut head = head.clone();
    head.l2 = cfg.l2;
    let map = |idx: &[usize]| -> Result<Vec<Vec<f64>>> {
        idx.iter().map(|&i| head.feature_map.apply(&data.instances[i].vector)).collect()
    };
    let train_feats = map(&train_idx)?;
    let val_feats = map(&val_idx)?;
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut trace = TrainTrace {
        train_size: train_idx.len(),
        validation_size: val_idx.len(),
        ..TrainTrace::default()
    };
    {
        let mut r = rng::stream(cfg.seed, &[tag::TRAIN_MASKS, u64::MAX]);
        let masks: BatchMasks = train_feats
            .iter()
            .map(|_| head.sample_masks(&mut r, cfg.posterior_updates))
            .collect();
        let batch = Batch {
            features: train_feats.clone(),
            labels: train_labels.clone(),
        };
        trace.initial_train_loss = Some(loss(&head, &batch, &masks)?);
    }

    let mut params = flatten_params(&head);
    let mut opt = Adam::new(params.len(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
    let mut best: Option<(f64, DropoutHead, usize)> = None;
    let mut stall = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_idx.len()).collect();
        splits::shuffle(&mut order, &mut rng::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut mask_rng = rng::stream(cfg.seed, &[tag::TRAIN_MASKS, epoch as u64]);
        let mut epoch_loss = 0.0;

        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch {
                features: chunk.iter().map(|&j| train_feats[j].clone()).collect(),
                labels: chunk.iter().map(|&j| train_labels[j]).collect(),
            };
            let masks: BatchMasks = chunk
                .iter()
                .map(|_| head.sample_masks(&mut mask_rng, cfg.posterior_updates))
                .collect();
            let (batch_loss, grad) = loss_and_gradient(&head, &batch, &masks)?;
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!("loss became {batch_loss} in epoch {epoch}")));
            }
            epoch_loss += batch_loss * chunk.len() as f64;
            opt.step(&mut params, &grad);
            set_params(&mut head, &params);

            if cfg.posterior_updates {
                for (li, layer) in head.layers.iter_mut().enumerate() {
                    if layer.fixed_keep_prob.is_some() {
                        continue;
                    }
                    let observed: Vec<Vec<bool>> = masks.iter().map(|m| m[li].clone()).collect();
                    layer.beta_state = bayes::beta_posterior_update(&layer.beta_state, &observed)?;
                }
            }
        }
        let train_loss = epoch_loss / train_idx.len() as f64;

        let val_loss = if use_validation {
            Some(mc_loss(&head, &val_feats, &val_labels, cfg.mc_passes_eval, cfg.seed)?)
        } else {
            None
        };
        trace.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });

        if let Some(v) = val_loss {
            match &best {
                Some((b, _, _)) if v >= *b => {
                    stall += 1;
                    if stall > cfg.early_stop_patience {
                        trace.stopped_early = true;
                        break;
                    }
                }
                _ => {
                    best = Some((v, head.clone(), epoch));
                    stall = 0;
                }
            }
        }
    }

    if let Some((_, best_head, epoch)) = best {
        trace.best_epoch = Some(epoch);
        head = best_head;
    }
    Ok((head, trace))
}
