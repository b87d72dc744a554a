//! Evaluation metrics over MC-averaged predictions: binary and multi-class
//! Brier scores, RMSE, macro F1, accuracy, per-class Brier, probability-bin
//! analysis, second-choice accuracy and review flagging.
//!
//! Conventions:
//!
//! * RMSE is `sqrt(mean over (instance, class) of (p - δ)²)`, so
//!   `rmse² · K == brier_multiclass`.
//! * F1 is macro-averaged. A class that never occurs in either truths or
//!   predictions is left out of the mean and listed in
//!   [`F1Accuracy::excluded_classes`]; a class that occurs in only one of
//!   them scores 0.
//! * For `K = 2` the headline [`CalibrationReport::brier`] is the binary
//!   score on the positive-class probability, which is half the
//!   multi-class value.

mod svg;

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums further than this from 1 are rejected by the metrics.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_BIN_EDGES: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 1.0];
pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.7;
const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub mean_probs: Vec<f64>,
    pub true_class: usize,
    /// Argmax of `mean_probs`, ties to the lowest index.
    pub predicted_class: usize,
    pub sample_variance: Vec<f64>,
}

impl PredictionRecord {
    pub fn new(
        instance_id: impl Into<String>,
        mean_probs: Vec<f64>,
        true_class: usize,
        sample_variance: Vec<f64>,
    ) -> Result<Self> {
        let instance_id = instance_id.into();
        let k = mean_probs.len();
        if k < 2 {
            return Err(Error::Config(format!("record {instance_id} has {k} classes; need at least 2")));
        }
        if let Some(index) = mean_probs.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if true_class >= k {
            return Err(Error::LabelOutOfRange {
                index: 0,
                label: true_class,
                num_classes: k,
            });
        }
        Ok(PredictionRecord {
            predicted_class: argmax(&mean_probs),
            instance_id,
            mean_probs,
            true_class,
            sample_variance,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.mean_probs.len()
    }

    pub fn max_prob(&self) -> f64 {
        self.mean_probs[self.predicted_class]
    }

    pub fn is_correct(&self) -> bool {
        self.predicted_class == self.true_class
    }

    /// Class ranked second by probability (stable: ties keep index order).
    pub fn second_choice(&self) -> usize {
        let mut order: Vec<usize> = (0..self.mean_probs.len()).collect();
        order.sort_by(|&a, &b| desc(self.mean_probs[a], self.mean_probs[b]));
        order[1]
    }
}

fn desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Common preconditions: nonempty, one class count, normalized rows.
fn check(records: &[PredictionRecord]) -> Result<usize> {
    let first = records.first().ok_or(Error::EmptyPredictions)?;
    let k = first.num_classes();
    for r in records {
        if r.num_classes() != k {
            return Err(Error::Config(format!(
                "record {} has {} classes, expected {k}",
                r.instance_id,
                r.num_classes()
            )));
        }
        let sum: f64 = r.mean_probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Unnormalized {
                id: r.instance_id.clone(),
                sum,
            });
        }
    }
    Ok(k)
}

fn squared_error(r: &PredictionRecord, k: usize) -> f64 {
    let delta = f64::from(u8::from(r.true_class == k));
    (r.mean_probs[k] - delta).powi(2)
}

/// `(1/N) Σ (P_i − O_i)²` over (probability, outcome) pairs.
pub fn brier_binary(preds: &[(f64, u8)]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let mut total = 0.0;
    for (index, &(prob, outcome)) in preds.iter().enumerate() {
        if !(0.0..=1.0).contains(&prob) || outcome > 1 {
            return Err(Error::InvalidOutcome { index, prob, outcome });
        }
        total += (prob - f64::from(outcome)).powi(2);
    }
    Ok(total / preds.len() as f64)
}

/// Positive-class (index 1) probability and outcome of each record.
pub fn binary_pairs(records: &[PredictionRecord]) -> Result<Vec<(f64, u8)>> {
    if check(records)? != 2 {
        return Err(Error::Config("binary pairs need exactly two classes".into()));
    }
    Ok(records
        .iter()
        .map(|r| (r.mean_probs[1].clamp(0.0, 1.0), u8::from(r.true_class == 1)))
        .collect())
}

/// `(1/N) Σ_i Σ_k (p_ik − δ_ik)²`.
pub fn brier_multiclass(records: &[PredictionRecord]) -> Result<f64> {
    Ok(per_class_brier(records)?.iter().sum())
}

/// Component `k` is `(1/N) Σ_i (p_ik − δ_ik)²`; the components sum to the
/// multi-class Brier score.
pub fn per_class_brier(records: &[PredictionRecord]) -> Result<Vec<f64>> {
    let k = check(records)?;
    let n = records.len() as f64;
    Ok((0..k)
        .map(|c| records.iter().map(|r| squared_error(r, c)).sum::<f64>() / n)
        .collect())
}

pub fn rmse(records: &[PredictionRecord]) -> Result<f64> {
    let k = check(records)?;
    Ok((brier_multiclass(records)? / k as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Accuracy {
    pub f1_macro: f64,
    pub accuracy: f64,
    /// Per-class F1; `None` for excluded classes.
    pub per_class_f1: Vec<Option<f64>>,
    /// Classes absent from both truths and predictions.
    pub excluded_classes: Vec<usize>,
}

pub fn f1_accuracy(records: &[PredictionRecord]) -> Result<F1Accuracy> {
    let k = check(records)?;
    let (mut tp, mut fp, mut fneg) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for r in records {
        if r.is_correct() {
            tp[r.true_class] += 1;
        } else {
            fp[r.predicted_class] += 1;
            fneg[r.true_class] += 1;
        }
    }
    let per_class_f1: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            (denom > 0).then(|| 2.0 * tp[c] as f64 / denom as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class_f1.iter().flatten().copied().collect();
    let accuracy = tp.iter().sum::<usize>() as f64 / records.len() as f64;
    Ok(F1Accuracy {
        f1_macro: defined.iter().sum::<f64>() / defined.len() as f64,
        accuracy,
        excluded_classes: (0..k).filter(|&c| per_class_f1[c].is_none()).collect(),
        per_class_f1,
    })
}

/// Among misclassified records, the fraction whose second-ranked class is
/// the true one; `None` when nothing is misclassified.
pub fn second_choice_accuracy(records: &[PredictionRecord]) -> Result<Option<f64>> {
    check(records)?;
    let wrong: Vec<&PredictionRecord> = records.iter().filter(|r| !r.is_correct()).collect();
    if wrong.is_empty() {
        return Ok(None);
    }
    let hits = wrong.iter().filter(|r| r.second_choice() == r.true_class).count();
    Ok(Some(hits as f64 / wrong.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityBin {
    pub lower: f64,
    pub upper: f64,
    /// Only the last bin includes its upper edge.
    pub closed: bool,
    pub correct: usize,
    pub incorrect: usize,
}

impl ProbabilityBin {
    pub fn total(&self) -> usize {
        self.correct + self.incorrect
    }

    pub fn label(&self) -> String {
        format!("[{}, {}{}", self.lower, self.upper, if self.closed { "]" } else { ")" })
    }
}

/// The default edges for `k` classes: the binary segments, preceded by
/// `1/k` when `k > 2` so every attainable maximum has a bin.
pub fn default_edges(k: usize) -> Vec<f64> {
    let mut edges = DEFAULT_BIN_EDGES.to_vec();
    if k > 2 {
        edges.insert(0, 1.0 / k as f64);
    }
    edges
}

/// Bin records by max probability into `[e_j, e_{j+1})`, the last bin
/// closed. Maxima below the first edge or above the last fall into the
/// first or last bin, so the bins always partition the records.
pub fn probability_bins(records: &[PredictionRecord], edges: &[f64]) -> Result<Vec<ProbabilityBin>> {
    let k = check(records)?;
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::Config(format!("bin edges must be finite and strictly increasing: {edges:?}")));
    }
    let floor = 1.0 / k as f64;
    let nbins = edges.len() - 1;
    let mut bins: Vec<ProbabilityBin> = edges
        .windows(2)
        .enumerate()
        .map(|(j, w)| ProbabilityBin {
            lower: w[0],
            upper: w[1],
            closed: j + 1 == nbins,
            correct: 0,
            incorrect: 0,
        })
        .collect();
    for r in records {
        let m = r.max_prob();
        if m < floor - RANGE_SLACK || m > 1.0 + RANGE_SLACK {
            return Err(Error::MaxProbOutOfRange {
                id: r.instance_id.clone(),
                max_prob: m,
            });
        }
        // number of interior edges <= m
        let j = edges[1..nbins].partition_point(|&e| e <= m);
        if r.is_correct() {
            bins[j].correct += 1;
        } else {
            bins[j].incorrect += 1;
        }
    }
    Ok(bins)
}

/// Ids with max probability below `threshold`, most uncertain first; ties
/// broken by id.
pub fn flag_uncertain(records: &[PredictionRecord], threshold: f64) -> Vec<String> {
    let mut hits: Vec<&PredictionRecord> = records.iter().filter(|r| r.max_prob() < threshold).collect();
    hits.sort_by(|a, b| {
        a.max_prob()
            .partial_cmp(&b.max_prob())
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.instance_id.cmp(&b.instance_id))
    });
    hits.into_iter().map(|r| r.instance_id.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrierFormula {
    Binary,
    Multiclass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub bin_edges: Option<Vec<f64>>,
    pub flag_threshold: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            bin_edges: None,
            flag_threshold: DEFAULT_FLAG_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub num_records: usize,
    pub num_classes: usize,
    pub f1_macro: f64,
    pub f1_excluded_classes: Vec<usize>,
    pub accuracy: f64,
    /// Binary score for two classes, multi-class score otherwise.
    pub brier: f64,
    pub brier_formula: BrierFormula,
    pub brier_multiclass: f64,
    pub rmse: f64,
    pub per_class_brier: Vec<f64>,
    pub bins: Vec<ProbabilityBin>,
    pub second_choice_accuracy: Option<f64>,
    pub flag_threshold: f64,
    pub flagged: Vec<String>,
}

impl CalibrationReport {
    pub fn from_records(records: &[PredictionRecord], opts: &ReportOptions) -> Result<Self> {
        let k = check(records)?;
        if !(opts.flag_threshold > 1.0 / k as f64 && opts.flag_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "flag threshold {} must lie in (1/{k}, 1]",
                opts.flag_threshold
            )));
        }
        let per_class_brier = per_class_brier(records)?;
        let brier_multiclass: f64 = per_class_brier.iter().sum();
        let (brier, brier_formula) = if k == 2 {
            (brier_binary(&binary_pairs(records)?)?, BrierFormula::Binary)
        } else {
            (brier_multiclass, BrierFormula::Multiclass)
        };
        let f1 = f1_accuracy(records)?;
        let edges = opts.bin_edges.clone().unwrap_or_else(|| default_edges(k));
        Ok(CalibrationReport {
            num_records: records.len(),
            num_classes: k,
            f1_macro: f1.f1_macro,
            f1_excluded_classes: f1.excluded_classes,
            accuracy: f1.accuracy,
            brier,
            brier_formula,
            brier_multiclass,
            rmse: (brier_multiclass / k as f64).sqrt(),
            per_class_brier,
            bins: probability_bins(records, &edges)?,
            second_choice_accuracy: second_choice_accuracy(records)?,
            flag_threshold: opts.flag_threshold,
            flagged: flag_uncertain(records, opts.flag_threshold),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `lower,upper,closed,correct,incorrect`.
    pub fn bins_csv(&self) -> String {
        bins_csv(&self.bins)
    }

    /// `class,brier` with class names when given.
    pub fn per_class_csv(&self, class_names: &[String]) -> String {
        per_class_csv(&self.per_class_brier, class_names)
    }

    pub fn bins_svg(&self) -> String {
        svg::bins_chart(&self.bins)
    }

    pub fn per_class_svg(&self, class_names: &[String]) -> String {
        svg::per_class_chart(&self.per_class_brier, class_names)
    }
}

pub fn bins_csv(bins: &[ProbabilityBin]) -> String {
    let mut out = String::from("lower,upper,closed,correct,incorrect\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{},{},{}", b.lower, b.upper, u8::from(b.closed), b.correct, b.incorrect);
    }
    out
}

pub fn per_class_csv(values: &[f64], class_names: &[String]) -> String {
    let mut out = String::from("class,brier\n");
    for (k, v) in values.iter().enumerate() {
        let name = class_names.get(k).cloned().unwrap_or_else(|| k.to_string());
        let _ = writeln!(out, "{},{}", csv_field(&name), v);
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub use svg::{bins_chart, per_class_chart};

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, probs: &[f64], truth: usize) -> PredictionRecord {
        PredictionRecord::new(id, probs.to_vec(), truth, vec![0.0; probs.len()]).unwrap()
    }

    #[test]
    fn binary_hand_cases() {
        assert_eq!(brier_binary(&[(1.0, 1), (0.0, 0)]).unwrap(), 0.0);
        assert_eq!(brier_binary(&[(0.5, 1)]).unwrap(), 0.25);
        assert!((brier_binary(&[(0.8, 1), (0.3, 0)]).unwrap() - 0.065).abs() < 1e-15);
        assert!(matches!(brier_binary(&[]), Err(Error::EmptyPredictions)));
        assert!(matches!(
            brier_binary(&[(0.2, 0), (0.5, 2)]),
            Err(Error::InvalidOutcome { index: 1, .. })
        ));
    }

    #[test]
    fn multiclass_hand_cases() {
        let onehot = [rec("a", &[1.0, 0.0, 0.0], 0), rec("b", &[0.0, 0.0, 1.0], 2)];
        assert_eq!(brier_multiclass(&onehot).unwrap(), 0.0);
        let uniform: Vec<_> = (0..4).map(|t| rec(&t.to_string(), &[0.25; 4], t)).collect();
        assert!((brier_multiclass(&uniform).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(brier_multiclass(&[rec("w", &[0.0, 1.0, 0.0], 0)]).unwrap(), 2.0);
    }

    #[test]
    fn unnormalized_rows_name_the_instance() {
        let bad = [rec("ok", &[0.5, 0.5], 0), rec("bad", &[0.5, 0.6], 0)];
        match brier_multiclass(&bad) {
            Err(Error::Unnormalized { id, .. }) => assert_eq!(id, "bad"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(rmse(&bad), Err(Error::Unnormalized { .. })));
    }

    #[test]
    fn rmse_hand_cases() {
        assert_eq!(rmse(&[rec("a", &[0.0, 1.0], 1)]).unwrap(), 0.0);
        let uniform: Vec<_> = (0..4).map(|t| rec(&t.to_string(), &[0.25; 4], t)).collect();
        assert!((rmse(&uniform).unwrap() - (0.75f64 / 4.0).sqrt()).abs() < 1e-12);
        assert!((rmse(&[rec("a", &[0.5, 0.5], 1)]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn f1_hand_cases() {
        let all = [rec("a", &[0.9, 0.1], 0), rec("b", &[0.2, 0.8], 1)];
        let r = f1_accuracy(&all).unwrap();
        assert_eq!((r.f1_macro, r.accuracy), (1.0, 1.0));

        // always class 0, truths half class 1: class 0 has P=1/2, R=1
        let recs: Vec<_> = (0..10).map(|i| rec(&i.to_string(), &[0.7, 0.3], i % 2)).collect();
        let r = f1_accuracy(&recs).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert!((r.f1_macro - 1.0 / 3.0).abs() < 1e-15);
        assert!(r.excluded_classes.is_empty());

        let three = [rec("a", &[0.8, 0.1, 0.1], 0), rec("b", &[0.1, 0.8, 0.1], 1)];
        let r = f1_accuracy(&three).unwrap();
        assert_eq!(r.excluded_classes, vec![2]);
        assert_eq!(r.f1_macro, 1.0);
    }

    #[test]
    fn per_class_hand_cases() {
        let uniform: Vec<_> = (0..3).map(|i| rec(&i.to_string(), &[0.25; 4], 0)).collect();
        let pc = per_class_brier(&uniform).unwrap();
        for (a, b) in pc.iter().zip([0.5625, 0.0625, 0.0625, 0.0625]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(per_class_brier(&[rec("a", &[0.0, 1.0, 0.0], 1)]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn second_choice_counts() {
        let recs = [
            rec("a", &[0.5, 0.3, 0.2], 1),
            rec("b", &[0.2, 0.5, 0.3], 2),
            rec("c", &[0.3, 0.2, 0.5], 0),
            rec("d", &[0.6, 0.1, 0.3], 1),
            rec("e", &[0.1, 0.8, 0.1], 1),
        ];
        assert_eq!(second_choice_accuracy(&recs).unwrap(), Some(0.75));
        assert_eq!(second_choice_accuracy(&recs[4..]).unwrap(), None);
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        let r = rec("t", &[0.4, 0.4, 0.2], 1);
        assert_eq!(r.predicted_class, 0);
        assert_eq!(r.second_choice(), 1);
    }

    #[test]
    fn bins_hand_case() {
        let recs = [
            rec("a", &[0.45, 0.55], 1),
            rec("b", &[0.95, 0.05], 0),
            rec("c", &[0.65, 0.35], 1),
        ];
        let bins = probability_bins(&recs, &DEFAULT_BIN_EDGES).unwrap();
        let counts: Vec<(usize, usize)> = bins.iter().map(|b| (b.correct, b.incorrect)).collect();
        assert_eq!(counts, vec![(1, 0), (0, 1), (0, 0), (1, 0)]);
        assert!(bins[3].closed && !bins[2].closed);
    }

    #[test]
    fn certain_predictions_land_in_the_closed_bin() {
        let recs: Vec<_> = (0..5).map(|i| rec(&i.to_string(), &[0.0, 1.0], i % 2)).collect();
        let bins = probability_bins(&recs, &DEFAULT_BIN_EDGES).unwrap();
        assert_eq!(bins[3].total(), 5);
        // boundary values go to the upper bin
        let b = probability_bins(&[rec("x", &[0.7, 0.3], 0)], &DEFAULT_BIN_EDGES).unwrap();
        assert_eq!(b[2].correct, 1);
    }

    #[test]
    fn out_of_range_max_is_rejected() {
        // passes the normalization tolerance but sits below 1/K
        let mut r = rec("s", &[0.5, 0.5], 0);
        r.mean_probs = vec![0.49995, 0.49995];
        match probability_bins(&[r], &DEFAULT_BIN_EDGES) {
            Err(Error::MaxProbOutOfRange { id, .. }) => assert_eq!(id, "s"),
            other => panic!("unexpected {other:?}"),
        }
        // K = 3 maxima below 0.5 get their own bin under the default edges
        let bins = probability_bins(&[rec("t", &[0.3, 0.3, 0.4], 2)], &default_edges(3)).unwrap();
        assert_eq!(bins[0].correct, 1);
    }

    #[test]
    fn bad_edges() {
        let recs = [rec("a", &[0.6, 0.4], 0)];
        for edges in [vec![0.5], vec![0.5, 0.5, 1.0], vec![0.8, 0.6]] {
            assert!(matches!(probability_bins(&recs, &edges), Err(Error::Config(_))));
        }
    }

    #[test]
    fn flagging() {
        let recs = [
            rec("a", &[0.55, 0.45], 0),
            rec("b", &[0.05, 0.95], 1),
            rec("c", &[0.35, 0.65], 0),
        ];
        assert_eq!(flag_uncertain(&recs, 0.7), vec!["a", "c"]);
        assert!(flag_uncertain(&recs, 0.5 + 1e-9).is_empty());
        let tied = [rec("z", &[0.6, 0.4], 0), rec("y", &[0.4, 0.6], 0)];
        assert_eq!(flag_uncertain(&tied, 0.7), vec!["y", "z"]);
    }

    #[test]
    fn report_for_two_classes_uses_the_binary_score() {
        let recs = [rec("a", &[0.2, 0.8], 1), rec("b", &[0.7, 0.3], 0), rec("c", &[0.6, 0.4], 1)];
        let r = CalibrationReport::from_records(&recs, &ReportOptions::default()).unwrap();
        assert_eq!(r.brier_formula, BrierFormula::Binary);
        assert!((2.0 * r.brier - r.brier_multiclass).abs() < 1e-12);
        assert_eq!(r.bins.iter().map(ProbabilityBin::total).sum::<usize>(), 3);
        assert_eq!(r.flagged, vec!["c"]);
        assert!(r.bins_csv().starts_with("lower,upper,closed,correct,incorrect\n0.5,0.6,0,"));
        let names = vec!["no".to_string(), "yes, really".to_string()];
        assert!(r.per_class_csv(&names).contains("\"yes, really\","));
        assert!(r.bins_svg().starts_with("<svg"));
        let back: CalibrationReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn report_rejects_a_threshold_at_chance() {
        let recs = [rec("a", &[0.2, 0.8], 1)];
        let opts = ReportOptions {
            flag_threshold: 0.5,
            ..ReportOptions::default()
        };
        assert!(matches!(CalibrationReport::from_records(&recs, &opts), Err(Error::Config(_))));
    }

    fn records(k: usize) -> impl Strategy<Value = Vec<PredictionRecord>> {
        prop::collection::vec((prop::collection::vec(0.01f64..1.0, k), 0..k), 1..40).prop_map(move |rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (w, t))| {
                    let s: f64 = w.iter().sum();
                    rec(&format!("r{i:03}"), &w.iter().map(|x| x / s).collect::<Vec<_>>(), t)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn binary_is_half_of_multiclass(recs in records(2)) {
            let b = brier_binary(&binary_pairs(&recs).unwrap()).unwrap();
            prop_assert!((2.0 * b - brier_multiclass(&recs).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn identities_hold((k, recs) in (2usize..6).prop_flat_map(|k| records(k).prop_map(move |r| (k, r)))) {
            let bm = brier_multiclass(&recs).unwrap();
            let r = rmse(&recs).unwrap();
            prop_assert!((r * r * k as f64 - bm).abs() < 1e-12);
            prop_assert!((per_class_brier(&recs).unwrap().iter().sum::<f64>() - bm).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&bm));
        }

        #[test]
        fn permutation_invariant(recs in records(3), seed in any::<u64>()) {
            let mut shuffled = recs.clone();
            crate::training::splits::shuffle(&mut shuffled, &mut crate::rng::stream(seed, &[]));
            let opts = ReportOptions::default();
            let a = CalibrationReport::from_records(&recs, &opts).unwrap();
            let b = CalibrationReport::from_records(&shuffled, &opts).unwrap();
            prop_assert!((a.brier - b.brier).abs() < 1e-12);
            prop_assert!((a.rmse - b.rmse).abs() < 1e-12);
            prop_assert_eq!(a.f1_macro, b.f1_macro);
            prop_assert_eq!(a.accuracy, b.accuracy);
            prop_assert_eq!(a.bins, b.bins);
            prop_assert_eq!(a.flagged, b.flagged);
            prop_assert_eq!(a.second_choice_accuracy, b.second_choice_accuracy);
        }

        #[test]
        fn bins_partition(recs in records(4), mut edges in prop::collection::vec(0.0f64..1.0, 2..8)) {
            edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
            edges.dedup();
            prop_assume!(edges.len() >= 2);
            let bins = probability_bins(&recs, &edges).unwrap();
            prop_assert_eq!(bins.iter().map(ProbabilityBin::total).sum::<usize>(), recs.len());
        }
    }
}
