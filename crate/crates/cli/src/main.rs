mod args;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use rayon::prelude::*;

use args::{parse_split_mode, Cli, Command, ConfigArgs};
use kdrop_core::calibration::{self, CalibrationReport, ReportOptions};
use kdrop_core::data_io::{self, EmbeddingDataset, ModelArtifact, Provenance};
use kdrop_core::experiment::{
    self, compare_runs, predict_records, run_experiment, split_seeds, ExperimentConfig, ExperimentReport,
};
use kdrop_core::synthetic::{gaussian_clusters, label_noise, ClusterSpec};
use kdrop_core::training::{self, SplitMode, SplitPlan, TrainConfig};
use kdrop_core::{Error, ErrorKind, Result};

const THREADS_ENV: &str = "KDROP_THREADS";

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
    }
}

/// One line, `error kind=<kind> message=<json string>`.
fn report_error(kind: ErrorKind, message: &str) -> ExitCode {
    let flat = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error kind={} message={}", kind_name(kind), serde_json::Value::String(flat));
    ExitCode::from(exit_code(kind))
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn dataset(cfg: &ExperimentConfig) -> Result<EmbeddingDataset> {
    let path = cfg
        .dataset_path
        .as_ref()
        .ok_or_else(|| Error::Config("--dataset-path (or dataset_path in the config) is required".into()))?;
    data_io::read_embf(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    data_io::write_atomic(path, text.as_bytes())
}

fn summary_line(report: &ExperimentReport) -> Result<String> {
    Ok(serde_json::to_string(&serde_json::json!({
        "mode": report.mode,
        "splits": report.splits.len(),
        "split_description": report.split_description,
        "mean": report.mean,
    }))?)
}

fn run_with(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let run = run_experiment(cfg)?;
    println!("{}", summary_line(&run.report)?);
    Ok(run.report)
}

fn train_full(cfg: &ExperimentConfig, model_out: Option<PathBuf>) -> Result<()> {
    let model_out = model_out
        .or_else(|| cfg.output_dir.as_ref().map(|d| d.join("model.kdm")))
        .ok_or_else(|| Error::Config("train needs --model-out or --output-dir".into()))?;
    cfg.validate()?;
    let data = dataset(cfg)?;
    data.validate()?;
    let seeds = split_seeds(cfg.seed, 0);
    let head = kdrop_core::bayes::DropoutHead::new(&cfg.head_spec(data.dim, data.num_classes(), seeds.init))?;
    let train_cfg = TrainConfig {
        seed: seeds.train,
        ..cfg.train.clone()
    };
    let (head, trace) = training::train(&head, &data, &train_cfg)?;
    let provenance = Provenance {
        dataset: data.name.clone(),
        split: "full dataset".into(),
        seed: cfg.seed,
        timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    if let Some(dir) = model_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    data_io::save_model(&ModelArtifact::new(head, train_cfg, provenance), &model_out)?;
    write_text(&model_out.with_extension("trace.csv"), &trace.to_csv())?;
    println!(
        "{}",
        serde_json::json!({
            "model": model_out,
            "epochs": trace.epochs.len(),
            "best_epoch": trace.best_epoch,
            "stopped_early": trace.stopped_early,
            "final_train_loss": trace.final_train_loss(),
        })
    );
    Ok(())
}

fn load_scoring(cfg: &ExperimentConfig, model: &Path) -> Result<(ModelArtifact, EmbeddingDataset)> {
    if cfg.mc_passes == 0 {
        return Err(Error::Config("mc_passes must be positive".into()));
    }
    let artifact = data_io::load_model(model)?;
    let data = dataset(cfg)?;
    data.validate()?;
    let head = &artifact.head;
    if head.feature_map.input_dim() != data.dim {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: head.feature_map.input_dim(),
            found: data.dim,
        });
    }
    if head.num_classes != data.num_classes() {
        return Err(Error::Config(format!(
            "model has {} classes, dataset has {}",
            head.num_classes,
            data.num_classes()
        )));
    }
    Ok((artifact, data))
}

fn score(cfg: &ExperimentConfig, artifact: &ModelArtifact, data: &EmbeddingDataset) -> Result<Vec<calibration::PredictionRecord>> {
    let all: Vec<usize> = (0..data.len()).collect();
    predict_records(&artifact.head, data, &all, cfg.mc_passes, split_seeds(cfg.seed, 0).predict)
}

fn eval(cfg: &ExperimentConfig, model: &Path) -> Result<()> {
    let (artifact, data) = load_scoring(cfg, model)?;
    let records = score(cfg, &artifact, &data)?;
    let report = CalibrationReport::from_records(
        &records,
        &ReportOptions {
            bin_edges: cfg.bin_edges.clone(),
            flag_threshold: cfg.flag_threshold,
        },
    )?;
    if let Some(dir) = &cfg.output_dir {
        write_text(&dir.join("eval_report.json"), &report.to_json()?)?;
        write_text(&dir.join("predictions.csv"), &experiment::predictions_csv(&records))?;
        write_text(&dir.join("bins.csv"), &report.bins_csv())?;
        write_text(&dir.join("per_class_brier.csv"), &report.per_class_csv(&data.classes))?;
        if cfg.write_svg {
            write_text(&dir.join("bins.svg"), &report.bins_svg())?;
            write_text(&dir.join("per_class_brier.svg"), &report.per_class_svg(&data.classes))?;
        }
    }
    println!(
        "{}",
        serde_json::json!({
            "instances": report.num_records,
            "f1_macro": report.f1_macro,
            "accuracy": report.accuracy,
            "brier": report.brier,
            "rmse": report.rmse,
            "flagged": report.flagged.len(),
        })
    );
    Ok(())
}

fn flag(cfg: &ExperimentConfig, model: &Path) -> Result<()> {
    let threshold = cfg.flag_threshold;
    let (artifact, data) = load_scoring(cfg, model)?;
    let k = data.num_classes() as f64;
    if !(threshold > 1.0 / k && threshold <= 1.0) {
        return Err(Error::Config(format!("flag threshold must lie in (1/K, 1], got {threshold}")));
    }
    let records = score(cfg, &artifact, &data)?;
    let flagged = calibration::flag_uncertain(&records, threshold);
    let by_id: std::collections::HashMap<&str, &calibration::PredictionRecord> =
        records.iter().map(|r| (r.instance_id.as_str(), r)).collect();
    let mut csv = String::from("id,max_prob,predicted,second_choice\n");
    for id in &flagged {
        let r = by_id[id.as_str()];
        csv.push_str(&format!(
            "{},{},{},{}\n",
            id,
            r.max_prob(),
            data.classes[r.predicted_class],
            data.classes[r.second_choice()]
        ));
    }
    match &cfg.output_dir {
        Some(dir) => write_text(&dir.join("flagged.csv"), &csv)?,
        None => print!("{csv}"),
    }
    eprintln!("flagged {} of {} below {threshold}", flagged.len(), records.len());
    Ok(())
}

fn fewshot(cfg: &ExperimentConfig, shots: &[usize]) -> Result<()> {
    if shots.is_empty() {
        return Err(Error::Config("--shots needs at least one value".into()));
    }
    let configs: Vec<ExperimentConfig> = shots
        .iter()
        .map(|&k| {
            let mut c = cfg.clone();
            c.split.mode = if k == 0 { SplitMode::ZeroShot } else { SplitMode::KShot(k) };
            c.output_dir = cfg.output_dir.as_ref().map(|d| d.join(format!("shots_{k}")));
            c
        })
        .collect();
    let reports: Vec<Result<ExperimentReport>> = configs.par_iter().map(|c| run_experiment(c).map(|r| r.report)).collect();
    let mut csv = String::from("shots,splits,composition,f1_macro,accuracy,brier,brier_multiclass,rmse\n");
    for (k, report) in shots.iter().zip(reports) {
        let r = report?;
        let m = &r.mean;
        csv.push_str(&format!(
            "{k},{},{},{},{},{},{},{}\n",
            r.splits.len(),
            r.composition,
            m.f1_macro,
            m.accuracy,
            m.brier,
            m.brier_multiclass,
            m.rmse
        ));
    }
    if let Some(dir) = &cfg.output_dir {
        write_text(&dir.join("fewshot_summary.csv"), &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn compare(proposed: &Path, baseline: &Path, output: Option<&Path>) -> Result<()> {
    let table = compare_runs(&ExperimentReport::load(proposed)?, &ExperimentReport::load(baseline)?)?;
    if let Some(path) = output {
        write_text(path, &table.to_csv())?;
    }
    print!("{}", table.to_text());
    Ok(())
}

fn report_svg(report: &Path, output_dir: Option<PathBuf>) -> Result<()> {
    let parsed = ExperimentReport::load(report)?;
    let dir = output_dir
        .or_else(|| report.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    experiment::write_svgs(&parsed, &dir)?;
    println!("{}", dir.display());
    Ok(())
}

fn with_mode(cfg: &ConfigArgs, mode: Option<SplitMode>) -> Result<ExperimentConfig> {
    let mut c = cfg.resolve()?;
    if let Some(mode) = mode {
        c.split = SplitPlan { mode, ..c.split };
    }
    Ok(c)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { cfg, split_mode } => {
            let mode = split_mode.as_deref().map(parse_split_mode).transpose()?;
            run_with(&with_mode(&cfg, mode)?).map(drop)
        }
        Command::Train { cfg, model_out } => train_full(&cfg.resolve()?, model_out),
        Command::Eval { cfg, model } => eval(&cfg.resolve()?, &model),
        Command::Fewshot { cfg, shots } => fewshot(&cfg.resolve()?, &shots),
        Command::Crossval { cfg, folds } => run_with(&with_mode(&cfg, Some(SplitMode::CrossVal(folds)))?).map(drop),
        Command::Compare {
            proposed,
            baseline,
            output,
        } => compare(&proposed, &baseline, output.as_deref()),
        Command::Flag { cfg, model } => flag(&cfg.resolve()?, &model),
        Command::ReportSvg { report, output_dir } => report_svg(&report, output_dir),
        Command::Synth {
            output,
            n,
            dim,
            num_classes,
            separation,
            sigma,
            seed,
            noise,
        } => {
            let data = if noise {
                label_noise(n, dim, num_classes, seed)?
            } else {
                gaussian_clusters(&ClusterSpec {
                    n,
                    dim,
                    num_classes,
                    separation,
                    sigma,
                    seed,
                })?
            };
            if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            data_io::write_embf(&data, &output)?;
            println!("{}", output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return report_error(ErrorKind::Config, first.trim_start_matches("error: "));
        }
    };
    if let Err(e) = configure_threads() {
        return report_error(e.kind(), &e.to_string());
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(e.kind(), &e.to_string()),
    }
}
