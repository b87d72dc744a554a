use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kdrop_core::experiment::ExperimentConfig;
use kdrop_core::kernels::KernelKind;
use kdrop_core::training::SplitMode;
use kdrop_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "kdrop", version, about = "Kernel-mapped Bayesian MC dropout over precomputed embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured split plan end to end.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `fraction:T`, `kshot:K`, `zero`, or `cv:F`.
        #[arg(long)]
        split_mode: Option<String>,
    },
    /// Train one head on the whole dataset and save it.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to `<output-dir>/model.kdm`.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Score a saved head on a dataset.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Run one experiment per shot count; 0 means zero-shot.
    Fewshot {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 5, 15])]
        shots: Vec<usize>,
    },
    /// Stratified k-fold cross-validation.
    Crossval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Per-metric deltas between two report.json files (proposed − baseline).
    Compare {
        #[arg(long)]
        proposed: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        /// Also write the table as CSV here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// List instances whose max predictive probability is below the threshold.
    Flag {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Render the charts of an existing report.json.
    ReportSvg {
        #[arg(long)]
        report: PathBuf,
        /// Defaults to the report's directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Write a synthetic Gaussian-cluster (or pure label-noise) EMBF file.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        num_classes: usize,
        /// Center distance in units of sigma.
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Features independent of labels.
        #[arg(long)]
        noise: bool,
    },
}

/// Experiment settings: a JSON config file, then any of these flags on top.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset_path: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub stratified: Option<bool>,
    #[arg(long)]
    pub cv_wrap: Option<usize>,

    /// squared, linear, rbf, laplacian or sigmoid.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rff_dim: Option<usize>,
    #[arg(long)]
    pub rff_seed: Option<u64>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub concat_original: Option<bool>,

    #[arg(long, value_delimiter = ',')]
    pub head_layers: Option<Vec<usize>>,
    #[arg(long)]
    pub beta_alpha: Option<f64>,
    #[arg(long)]
    pub beta_beta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub mc_passes: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub baseline_mode: Option<bool>,
    #[arg(long)]
    pub baseline_keep_prob: Option<f64>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub posterior_updates: Option<bool>,

    #[arg(long, value_delimiter = ',')]
    pub bin_edges: Option<Vec<f64>>,
    #[arg(long)]
    pub flag_threshold: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub write_svg: Option<bool>,
}

macro_rules! set {
    ($src:expr => $dst:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v;
        }
    };
}

impl ConfigArgs {
    /// Config file (or defaults) with the flags applied; not yet validated.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if self.dataset_path.is_some() {
            c.dataset_path = self.dataset_path.clone();
        }
        if self.output_dir.is_some() {
            c.output_dir = self.output_dir.clone();
        }
        if self.cv_wrap.is_some() {
            c.cv_wrap = self.cv_wrap;
        }
        if self.bin_edges.is_some() {
            c.bin_edges = self.bin_edges.clone();
        }
        if let Some(k) = &self.kernel {
            c.kernel.kind = k.parse::<KernelKind>()?;
        }
        set!(self.seed => c.seed);
        set!(self.split_seed => c.split.seed);
        set!(self.stratified => c.split.stratified);
        set!(self.gamma => c.kernel.gamma);
        set!(self.rff_dim => c.kernel.rff_dim);
        set!(self.rff_seed => c.kernel.rff_seed);
        set!(self.scale => c.kernel.scale);
        set!(self.concat_original => c.kernel.concat_original);
        set!(self.head_layers => c.head_layers);
        set!(self.beta_alpha => c.beta_alpha);
        set!(self.beta_beta => c.beta_beta);
        set!(self.tau => c.tau);
        set!(self.mc_passes => c.mc_passes);
        set!(self.baseline_mode => c.baseline_mode);
        set!(self.baseline_keep_prob => c.baseline_keep_prob);
        set!(self.epochs => c.train.epochs);
        set!(self.learning_rate => c.train.learning_rate);
        set!(self.l2 => c.train.l2);
        set!(self.batch_size => c.train.batch_size);
        set!(self.early_stop_patience => c.train.early_stop_patience);
        set!(self.validation_fraction => c.train.validation_fraction);
        set!(self.posterior_updates => c.train.posterior_updates);
        set!(self.flag_threshold => c.flag_threshold);
        set!(self.write_svg => c.write_svg);
        Ok(c)
    }
}

pub fn parse_split_mode(s: &str) -> Result<SplitMode> {
    let bad = || Error::Config(format!("split mode {s:?}: expected fraction:T, kshot:K, zero or cv:F"));
    let (name, value) = s.split_once(':').unwrap_or((s, ""));
    match name.to_ascii_lowercase().as_str() {
        "zero" | "zero_shot" | "zero-shot" if value.is_empty() => Ok(SplitMode::ZeroShot),
        "fraction" => value.parse().map(SplitMode::FractionSplit).map_err(|_| bad()),
        "kshot" | "k_shot" | "k-shot" => value.parse().map(SplitMode::KShot).map_err(|_| bad()),
        "cv" | "crossval" => value.parse().map(SplitMode::CrossVal).map_err(|_| bad()),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_modes_parse() {
        assert_eq!(parse_split_mode("fraction:0.8").unwrap(), SplitMode::FractionSplit(0.8));
        assert_eq!(parse_split_mode("kshot:5").unwrap(), SplitMode::KShot(5));
        assert_eq!(parse_split_mode("zero").unwrap(), SplitMode::ZeroShot);
        assert_eq!(parse_split_mode("cv:5").unwrap(), SplitMode::CrossVal(5));
        assert!(parse_split_mode("kshot").is_err());
        assert!(parse_split_mode("holdout:3").is_err());
    }

    #[test]
    fn flags_override_defaults() {
        let args = Cli::parse_from([
            "kdrop",
            "run",
            "--seed",
            "9",
            "--head-layers",
            "16,8",
            "--kernel",
            "rbf",
            "--baseline-mode",
            "--concat-original",
            "false",
        ]);
        let Command::Run { cfg, .. } = args.command else { panic!() };
        let c = cfg.resolve().unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.head_layers, vec![16, 8]);
        assert_eq!(c.kernel.kind, KernelKind::RbfRff);
        assert!(c.baseline_mode);
        assert!(!c.kernel.concat_original);
        assert_eq!(c.train, ExperimentConfig::default().train);
    }
}
