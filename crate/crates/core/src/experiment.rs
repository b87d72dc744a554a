//! End-to-end runs: split a dataset, train one head per split, evaluate it
//! with MC prediction and aggregate the calibration reports.
//!
//! Every split draws its own seeds from `(seed, split index)`, and splits run
//! on the rayon pool, so the report is identical for any thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{self, DropoutHead, HeadSpec, KeepPrior};
use crate::calibration::{self, CalibrationReport, PredictionRecord, ProbabilityBin, ReportOptions};
use crate::data_io::{self, EmbeddingDataset, ModelArtifact, Provenance};
use crate::error::{Error, Result};
use crate::kernels::KernelConfig;
use crate::rng::{derive_seed, tag};
use crate::training::{self, make_splits, Split, SplitMode, SplitPlan, TrainConfig, TrainTrace};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_path: Option<PathBuf>,
    pub kernel: KernelConfig,
    pub head_layers: Vec<usize>,
    pub beta_alpha: f64,
    pub beta_beta: f64,
    pub tau: f64,
    pub train: TrainConfig,
    pub split: SplitPlan,
    /// Run the split plan inside each fold of this many-fold cross-validation
    /// (few-shot draws come from the fold's training part; the fold's test
    /// part is evaluated).
    pub cv_wrap: Option<usize>,
    pub mc_passes: usize,
    /// Fixed-rate MC dropout on the raw embedding instead of the kernel map
    /// and Beta priors.
    pub baseline_mode: bool,
    pub baseline_keep_prob: f64,
    pub seed: u64,
    pub bin_edges: Option<Vec<f64>>,
    pub flag_threshold: f64,
    pub write_svg: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_path: None,
            kernel: KernelConfig::default(),
            head_layers: vec![32],
            beta_alpha: 1e-4,
            beta_beta: 1e-4,
            tau: 1.0,
            train: TrainConfig::default(),
            split: SplitPlan::default(),
            cv_wrap: None,
            mc_passes: bayes::DEFAULT_MC_PASSES,
            baseline_mode: false,
            baseline_keep_prob: 0.9,
            seed: 0,
            bin_edges: None,
            flag_threshold: calibration::DEFAULT_FLAG_THRESHOLD,
            write_svg: false,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.head_layers.contains(&0) {
            return Err(Error::Config("head_layers widths must be positive".into()));
        }
        if !(self.beta_alpha > 0.0 && self.beta_beta > 0.0) {
            return Err(Error::Config(format!(
                "beta_alpha and beta_beta must be positive, got {} and {}",
                self.beta_alpha, self.beta_beta
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidTau(self.tau));
        }
        if self.mc_passes == 0 {
            return Err(Error::Config("mc_passes must be positive".into()));
        }
        if !(self.baseline_keep_prob > 0.0 && self.baseline_keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "baseline_keep_prob must lie in (0, 1], got {}",
                self.baseline_keep_prob
            )));
        }
        if let Some(folds) = self.cv_wrap {
            if folds < 2 {
                return Err(Error::Config(format!("cv_wrap needs >= 2 folds, got {folds}")));
            }
            if !matches!(self.split.mode, SplitMode::KShot(_) | SplitMode::ZeroShot) {
                return Err(Error::Config("cv_wrap only composes with k-shot or zero-shot plans".into()));
            }
        }
        self.kernel.validate()?;
        self.train.validate()?;
        self.split.validate()
    }

    pub fn mode(&self) -> RunMode {
        if self.baseline_mode {
            RunMode::Baseline
        } else {
            RunMode::Proposed
        }
    }

    /// Head shape for this config; the baseline swaps in the identity map and
    /// a fixed keep probability.
    pub fn head_spec(&self, input_dim: usize, num_classes: usize, seed: u64) -> HeadSpec {
        let (kernel, prior) = if self.baseline_mode {
            (KernelConfig::linear(), KeepPrior::Fixed(self.baseline_keep_prob))
        } else {
            (
                self.kernel.clone(),
                KeepPrior::Beta {
                    alpha: self.beta_alpha,
                    beta: self.beta_beta,
                },
            )
        };
        HeadSpec {
            input_dim,
            hidden: self.head_layers.clone(),
            num_classes,
            kernel,
            prior,
            tau: self.tau,
            l2: self.train.l2,
            seed,
        }
    }

    fn report_options(&self) -> ReportOptions {
        ReportOptions {
            bin_edges: self.bin_edges.clone(),
            flag_threshold: self.flag_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Proposed,
    Baseline,
}

/// Seeds for one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSeeds {
    pub init: u64,
    pub train: u64,
    pub predict: u64,
}

pub fn split_seeds(seed: u64, index: usize) -> SplitSeeds {
    let s = |k: u64| derive_seed(seed, &[tag::EXPERIMENT, index as u64, k]);
    SplitSeeds {
        init: s(0),
        train: s(1),
        predict: s(2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub num_instances: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub classes: Vec<String>,
    /// FNV-1a of the dataset's EMBF encoding.
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub best_epoch: Option<usize>,
    pub initial_train_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub validation_size: usize,
}

impl From<&TrainTrace> for TraceSummary {
    fn from(t: &TrainTrace) -> Self {
        TraceSummary {
            epochs_run: t.epochs.len(),
            stopped_early: t.stopped_early,
            best_epoch: t.best_epoch,
            initial_train_loss: t.initial_train_loss,
            final_train_loss: t.final_train_loss(),
            validation_size: t.validation_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub index: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub train_fingerprint: String,
    pub test_fingerprint: String,
    pub trained: bool,
    pub trace: TraceSummary,
    pub report: CalibrationReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub f1_macro: f64,
    pub accuracy: f64,
    pub brier: f64,
    pub brier_multiclass: f64,
    pub rmse: f64,
    /// Over the splits where it is defined.
    pub second_choice_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub mode: RunMode,
    pub dataset: DatasetSummary,
    pub seed: u64,
    pub split_plan: SplitPlan,
    pub split_description: String,
    /// `single`, `cross_validation` or `within_cross_validation`.
    pub composition: String,
    pub config: ExperimentConfig,
    pub splits: Vec<SplitReport>,
    pub mean: MetricSummary,
    /// Sample standard deviation across splits (0 for a single split).
    pub std: MetricSummary,
    pub pooled_bins: Vec<ProbabilityBin>,
    pub mean_per_class_brier: Vec<f64>,
    /// Unix seconds at completion; the only nondeterministic field.
    pub timestamp: Option<u64>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with the timestamp removed; byte-identical across reruns.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.timestamp = None;
        copy.to_json()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Everything a split produced, beyond its report entry.
#[derive(Debug, Clone)]
pub struct SplitArtifacts {
    pub split: Split,
    pub records: Vec<PredictionRecord>,
    pub trace: TrainTrace,
    pub model: ModelArtifact,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub artifacts: Vec<SplitArtifacts>,
}

fn fingerprint_indices(indices: &[usize]) -> String {
    let bytes: Vec<u8> = indices.iter().flat_map(|&i| (i as u64).to_le_bytes()).collect();
    format!("{:016x}", data_io::fnv1a64(&bytes))
}

fn summarize(data: &EmbeddingDataset) -> Result<DatasetSummary> {
    Ok(DatasetSummary {
        name: data.name.clone(),
        num_instances: data.len(),
        num_classes: data.num_classes(),
        dim: data.dim,
        classes: data.classes.clone(),
        fingerprint: format!("{:016x}", data_io::fnv1a64(&data_io::write_embf_bytes(data)?)),
    })
}

/// Build the splits for `cfg`, and name how they were composed.
pub fn plan_splits(data: &EmbeddingDataset, cfg: &ExperimentConfig) -> Result<(Vec<Split>, String)> {
    let plan = &cfg.split;
    match cfg.cv_wrap {
        None => {
            let composition = if matches!(plan.mode, SplitMode::CrossVal(_)) {
                "cross_validation"
            } else {
                "single"
            };
            Ok((make_splits(data, plan)?, composition.to_string()))
        }
        Some(folds) => {
            let outer = make_splits(
                data,
                &SplitPlan {
                    mode: SplitMode::CrossVal(folds),
                    stratified: plan.stratified,
                    seed: plan.seed,
                },
            )?;
            let splits = outer
                .into_iter()
                .enumerate()
                .map(|(f, fold)| {
                    let inner_plan = SplitPlan {
                        seed: derive_seed(plan.seed, &[tag::EXPERIMENT, f as u64]),
                        ..*plan
                    };
                    let inner = make_splits(&data.subset(&fold.train), &inner_plan).map_err(|e| e.in_split(f))?;
                    let mut train: Vec<usize> = inner[0].train.iter().map(|&i| fold.train[i]).collect();
                    train.sort_unstable();
                    Ok(Split { train, test: fold.test })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((splits, "within_cross_validation".to_string()))
        }
    }
}

/// MC predictions for `indices` of `data`, as calibration records.
pub fn predict_records(
    head: &DropoutHead,
    data: &EmbeddingDataset,
    indices: &[usize],
    passes: usize,
    seed: u64,
) -> Result<Vec<PredictionRecord>> {
    let xs: Vec<Vec<f64>> = indices.iter().map(|&i| data.instances[i].vector.clone()).collect();
    let summaries = bayes::predict_batch(head, &xs, passes, seed, true)?;
    indices
        .iter()
        .zip(summaries)
        .map(|(&i, s)| {
            let inst = &data.instances[i];
            PredictionRecord::new(inst.id.clone(), s.mean_probs, inst.label, s.sample_variance)
        })
        .collect()
}

fn run_split(
    data: &EmbeddingDataset,
    cfg: &ExperimentConfig,
    index: usize,
    split: &Split,
    description: &str,
) -> Result<(SplitReport, SplitArtifacts)> {
    if split.test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let seeds = split_seeds(cfg.seed, index);
    let head = DropoutHead::new(&cfg.head_spec(data.dim, data.num_classes(), seeds.init))?;
    let train_cfg = TrainConfig {
        seed: seeds.train,
        ..cfg.train.clone()
    };
    let trained = !split.train.is_empty() && cfg.split.mode != SplitMode::ZeroShot;
    let (head, trace) = if trained {
        training::train(&head, &data.subset(&split.train), &train_cfg)?
    } else {
        (head, TrainTrace::default())
    };
    let records = predict_records(&head, data, &split.test, cfg.mc_passes, seeds.predict)?;
    let report = CalibrationReport::from_records(&records, &cfg.report_options())?;
    let entry = SplitReport {
        index,
        train_size: split.train.len(),
        test_size: split.test.len(),
        train_fingerprint: fingerprint_indices(&split.train),
        test_fingerprint: fingerprint_indices(&split.test),
        trained,
        trace: TraceSummary::from(&trace),
        report,
    };
    let model = ModelArtifact::new(
        head,
        train_cfg,
        Provenance {
            dataset: data.name.clone(),
            split: format!("{description}, split {index}"),
            seed: cfg.seed,
            timestamp: now(),
        },
    );
    Ok((
        entry,
        SplitArtifacts {
            split: split.clone(),
            records,
            trace,
            model,
        },
    ))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn aggregate(splits: &[SplitReport]) -> (MetricSummary, MetricSummary) {
    let stat = |f: fn(&CalibrationReport) -> f64| {
        let v: Vec<f64> = splits.iter().map(|s| f(&s.report)).collect();
        mean_std(&v)
    };
    let (f1, f1s) = stat(|r| r.f1_macro);
    let (acc, accs) = stat(|r| r.accuracy);
    let (b, bs) = stat(|r| r.brier);
    let (bm, bms) = stat(|r| r.brier_multiclass);
    let (rm, rms) = stat(|r| r.rmse);
    let sca: Vec<f64> = splits.iter().filter_map(|s| s.report.second_choice_accuracy).collect();
    let (sc, scs) = if sca.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&sca);
        (Some(m), Some(s))
    };
    (
        MetricSummary {
            f1_macro: f1,
            accuracy: acc,
            brier: b,
            brier_multiclass: bm,
            rmse: rm,
            second_choice_accuracy: sc,
        },
        MetricSummary {
            f1_macro: f1s,
            accuracy: accs,
            brier: bs,
            brier_multiclass: bms,
            rmse: rms,
            second_choice_accuracy: scs,
        },
    )
}

/// Run `cfg` on an in-memory dataset. Nothing is written to disk.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &EmbeddingDataset) -> Result<ExperimentRun> {
    cfg.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let (splits, composition) = plan_splits(data, cfg)?;
    let description = cfg.split.describe();

    // collect per split so the reported error is the lowest failing index
    let results: Vec<Result<(SplitReport, SplitArtifacts)>> = splits
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_split(data, cfg, i, s, &description).map_err(|e| e.in_split(i)))
        .collect();
    let mut entries = Vec::with_capacity(results.len());
    let mut artifacts = Vec::with_capacity(results.len());
    for r in results {
        let (e, a) = r?;
        entries.push(e);
        artifacts.push(a);
    }

    let (mean, std) = aggregate(&entries);
    let mut pooled_bins = entries[0].report.bins.clone();
    for b in &mut pooled_bins {
        b.correct = 0;
        b.incorrect = 0;
    }
    for e in &entries {
        for (acc, b) in pooled_bins.iter_mut().zip(&e.report.bins) {
            acc.correct += b.correct;
            acc.incorrect += b.incorrect;
        }
    }
    let k = data.num_classes();
    let mean_per_class_brier: Vec<f64> = (0..k)
        .map(|c| entries.iter().map(|e| e.report.per_class_brier[c]).sum::<f64>() / entries.len() as f64)
        .collect();

    let mut config = cfg.clone();
    config.dataset_path = None;
    config.output_dir = None;
    let report = ExperimentReport {
        format_version: REPORT_VERSION,
        mode: cfg.mode(),
        dataset: summarize(data)?,
        seed: cfg.seed,
        split_plan: cfg.split,
        split_description: description,
        composition,
        config,
        splits: entries,
        mean,
        std,
        pooled_bins,
        mean_per_class_brier,
        timestamp: Some(now()),
    };
    Ok(ExperimentRun { report, artifacts })
}

/// Load `cfg.dataset_path`, run, and write outputs when `cfg.output_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let path = cfg
        .dataset_path
        .as_ref()
        .ok_or_else(|| Error::Config("dataset_path is required".into()))?;
    let data = data_io::read_embf(path)?;
    let run = run_experiment_on(cfg, &data)?;
    if let Some(dir) = &cfg.output_dir {
        write_outputs(&run, dir, cfg.write_svg)?;
    }
    Ok(run)
}

/// `id,true_class,predicted_class,max_prob,p_0..,var_0..`.
pub fn predictions_csv(records: &[PredictionRecord]) -> String {
    let k = records.first().map_or(0, |r| r.num_classes());
    let mut out = String::from("id,true_class,predicted_class,max_prob");
    for c in 0..k {
        let _ = write!(out, ",p_{c}");
    }
    for c in 0..k {
        let _ = write!(out, ",var_{c}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{},{}", r.instance_id, r.true_class, r.predicted_class, r.max_prob());
        for v in r.mean_probs.iter().chain(&r.sample_variance) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Stable file names under `dir`:
/// `report.json`, `splits.json`, `bins.csv`, `per_class_brier.csv`, and per
/// split `trace_split{i}.csv`, `predictions_split{i}.csv`,
/// `model_split{i}.kdm`; with `svg`, `bins.svg` and `per_class_brier.svg`.
pub fn write_outputs(run: &ExperimentRun, dir: &Path, svg: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, text: &str| data_io::write_atomic(&dir.join(name), text.as_bytes());
    let report = &run.report;
    put("report.json", &report.to_json()?)?;
    let splits: Vec<&Split> = run.artifacts.iter().map(|a| &a.split).collect();
    put("splits.json", &serde_json::to_string(&splits)?)?;
    put("bins.csv", &calibration::bins_csv(&report.pooled_bins))?;
    put(
        "per_class_brier.csv",
        &calibration::per_class_csv(&report.mean_per_class_brier, &report.dataset.classes),
    )?;
    for (i, a) in run.artifacts.iter().enumerate() {
        put(&format!("trace_split{i}.csv"), &a.trace.to_csv())?;
        put(&format!("predictions_split{i}.csv"), &predictions_csv(&a.records))?;
        data_io::save_model(&a.model, dir.join(format!("model_split{i}.kdm")))?;
    }
    if svg {
        write_svgs(report, dir)?;
    }
    Ok(())
}

pub fn write_svgs(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    data_io::write_atomic(&dir.join("bins.svg"), calibration::bins_chart(&report.pooled_bins).as_bytes())?;
    data_io::write_atomic(
        &dir.join("per_class_brier.svg"),
        calibration::per_class_chart(&report.mean_per_class_brier, &report.dataset.classes).as_bytes(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub metric: String,
    pub proposed: f64,
    pub baseline: f64,
    /// `proposed - baseline`.
    pub delta: f64,
    pub lower_is_better: bool,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub dataset: String,
    pub split_description: String,
    pub rows: Vec<DeltaRow>,
}

impl DeltaTable {
    pub fn row(&self, metric: &str) -> Option<&DeltaRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,proposed,baseline,delta,improved\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.metric, r.proposed, r.baseline, r.delta, u8::from(r.improved));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} | {}\n", self.dataset, self.split_description);
        let _ = writeln!(out, "{:<24} {:>10} {:>10} {:>10}", "metric", "proposed", "baseline", "delta");
        for r in &self.rows {
            let mark = if r.improved { " *" } else { "" };
            let _ = writeln!(
                out,
                "{:<24} {:>10.4} {:>10.4} {:>+10.4}{mark}",
                r.metric, r.proposed, r.baseline, r.delta
            );
        }
        out
    }
}

/// Per-metric `proposed - baseline` on the mean metrics. Runs must share the
/// dataset, the split plan and every split's index sets.
pub fn compare_runs(proposed: &ExperimentReport, baseline: &ExperimentReport) -> Result<DeltaTable> {
    let fail = |m: String| Err(Error::NotComparable(m));
    if proposed.dataset.fingerprint != baseline.dataset.fingerprint {
        return fail(format!(
            "datasets differ ({} vs {})",
            proposed.dataset.fingerprint, baseline.dataset.fingerprint
        ));
    }
    if proposed.split_plan != baseline.split_plan {
        return fail(format!(
            "split plans differ (seed {} vs {})",
            proposed.split_plan.seed, baseline.split_plan.seed
        ));
    }
    if proposed.splits.len() != baseline.splits.len() {
        return fail("different numbers of splits".into());
    }
    for (a, b) in proposed.splits.iter().zip(&baseline.splits) {
        if a.train_fingerprint != b.train_fingerprint || a.test_fingerprint != b.test_fingerprint {
            return fail(format!("split {} index sets differ", a.index));
        }
    }
    let (p, b) = (&proposed.mean, &baseline.mean);
    let mut metrics = vec![
        ("brier", p.brier, b.brier, true),
        ("brier_multiclass", p.brier_multiclass, b.brier_multiclass, true),
        ("rmse", p.rmse, b.rmse, true),
        ("f1_macro", p.f1_macro, b.f1_macro, false),
        ("accuracy", p.accuracy, b.accuracy, false),
    ];
    if let (Some(x), Some(y)) = (p.second_choice_accuracy, b.second_choice_accuracy) {
        metrics.push(("second_choice_accuracy", x, y, false));
    }
    let rows = metrics
        .into_iter()
        .map(|(metric, proposed, baseline, lower_is_better)| {
            let delta = proposed - baseline;
            DeltaRow {
                metric: metric.to_string(),
                proposed,
                baseline,
                delta,
                lower_is_better,
                improved: if lower_is_better { delta < 0.0 } else { delta > 0.0 },
            }
        })
        .collect();
    Ok(DeltaTable {
        dataset: proposed.dataset.name.clone(),
        split_description: proposed.split_description.clone(),
        rows,
    })
}
