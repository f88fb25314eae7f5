//! The five experiment commands: data generation, training, sweeps,
//! gradient verification, and dataset statistics.

use crate::config::ExperimentConfig;
use ace_core::data::{compute_stats, load_csv, save_csv, DatasetStats, Split};
use ace_core::error::{Error, Result};
use ace_core::eval::{evaluate, write_per_class_csv, EvalReport};
use ace_core::gradcheck;
use ace_core::model::ModelParams;
use ace_core::seed::stream_rng;
use ace_core::train::{crt_second_stage, train};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Everything needed to reproduce a run, written before training starts.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub dataset_stats: DatasetStats,
    pub artifacts: ArtifactPaths,
}

#[derive(Debug, Serialize)]
pub struct ArtifactPaths {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub report: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crt_checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crt_report: Option<PathBuf>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn gen_data(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let spec = cfg.synthetic_spec();
    let (train_ds, test_ds) = ace_core::data::generate(&spec)?;
    let stats = compute_stats(&train_ds)?;
    let train_path = out_dir.join("train.csv");
    let test_path = out_dir.join("test.csv");
    let stats_path = out_dir.join("stats.json");
    save_csv(&train_ds, &train_path)?;
    save_csv(&test_ds, &test_path)?;
    write_json(&stats, &stats_path)?;
    println!("wrote {}", train_path.display());
    println!("wrote {}", test_path.display());
    println!("wrote {}", stats_path.display());
    Ok(())
}

pub fn stats(dataset: &Path) -> Result<()> {
    let ds = load_csv(dataset, Split::Train)?;
    let stats = compute_stats(&ds)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&stats).expect("stats serialize")
    );
    Ok(())
}

pub fn grad_check(seed: u64, trials: usize) -> Result<()> {
    let report = gradcheck::run(seed, trials)?;
    for family in &report.families {
        println!(
            "{:<22} max_rel_error {:>12.3e}  ({} trials)",
            family.name, family.max_rel_error, family.trials
        );
    }
    if report.passed() {
        println!("all gradient families within {:.0e}", gradcheck::GRAD_TOL);
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "worst gradient family error {:.3e} exceeds {:.0e}",
            report.worst(),
            gradcheck::GRAD_TOL
        )))
    }
}

pub struct TrainArtifacts {
    pub report: EvalReport,
    pub crt_report: Option<EvalReport>,
}

pub fn run_training(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    with_crt: bool,
    per_class_csv: bool,
) -> Result<TrainArtifacts> {
    cfg.train.validate()?;
    ensure_dir(out_dir)?;
    let (train_ds, test_ds) = cfg.load_datasets()?;
    let dataset_stats = compute_stats(&train_ds)?;

    let artifacts = ArtifactPaths {
        checkpoint: out_dir.join("checkpoint.json"),
        log: out_dir.join("log.jsonl"),
        report: out_dir.join("report.json"),
        per_class_csv: per_class_csv.then(|| out_dir.join("per_class.csv")),
        crt_checkpoint: with_crt.then(|| out_dir.join("checkpoint_crt.json")),
        crt_report: with_crt.then(|| out_dir.join("report_crt.json")),
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.train.seed,
        config: cfg.clone(),
        dataset_stats,
        artifacts,
    };
    write_json(&manifest, &out_dir.join("manifest.json"))?;

    let model = ModelParams::init(
        cfg.architecture(),
        train_ds.feature_dim(),
        train_ds.num_classes().max(test_ds.num_classes()),
        &mut stream_rng(cfg.train.seed, "init"),
    )?;
    let outcome = train(model, &train_ds, &test_ds, &cfg.train)?;
    for warning in &outcome.log.warnings {
        eprintln!("warning: {warning}");
    }

    outcome.params.save(&manifest.artifacts.checkpoint)?;
    outcome.log.write_jsonl(&manifest.artifacts.log)?;
    let report = evaluate(
        &outcome.params,
        &test_ds,
        train_ds.class_counts(),
        cfg.group_mode(),
        Some(&outcome.log),
    )?;
    write_json(&report, &manifest.artifacts.report)?;
    if let Some(path) = &manifest.artifacts.per_class_csv {
        let counts = ace_core::eval::top1(&outcome.params, &test_ds)?.per_class_counts;
        write_per_class_csv(&report, &counts, path)?;
    }

    let mut crt_report = None;
    if with_crt {
        let (crt_params, crt_log) =
            crt_second_stage(outcome.params, &train_ds, &test_ds, &cfg.train)?;
        for warning in &crt_log.warnings {
            eprintln!("warning: {warning}");
        }
        crt_params.save(manifest.artifacts.crt_checkpoint.as_ref().unwrap())?;
        let report = evaluate(
            &crt_params,
            &test_ds,
            train_ds.class_counts(),
            cfg.group_mode(),
            Some(&crt_log),
        )?;
        write_json(&report, manifest.artifacts.crt_report.as_ref().unwrap())?;
        crt_report = Some(report);
    }

    Ok(TrainArtifacts { report, crt_report })
}

pub fn train_command(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    with_crt: bool,
    per_class_csv: bool,
) -> Result<()> {
    let artifacts = run_training(cfg, out_dir, with_crt, per_class_csv)?;
    print_summary("final", &artifacts.report);
    if let Some(report) = &artifacts.crt_report {
        print_summary("crt", report);
    }
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

fn print_summary(tag: &str, report: &EvalReport) {
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{:.4}", x),
        None => "-".to_string(),
    };
    println!(
        "{tag}: total {:.4}  many {}  median {}  few {}  gap {}",
        report.top1_total,
        fmt(report.top1_by_group.many),
        fmt(report.top1_by_group.median),
        fmt(report.top1_by_group.few),
        fmt(report.train_val_gap),
    );
}

pub const SWEEP_PARAMS: &[&str] = &["lambda", "tau", "eta", "delta", "ratio"];

pub fn sweep(base: &ExperimentConfig, param: &str, values: &[f64], out_dir: &Path) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Invalid("sweep needs at least one value".into()));
    }
    if !SWEEP_PARAMS.contains(&param) {
        return Err(Error::Invalid(format!(
            "sweep parameter must be one of {}, got `{param}`",
            SWEEP_PARAMS.join(", ")
        )));
    }
    if matches!(param, "delta" | "ratio") && !base.is_synthetic() {
        return Err(Error::Invalid(format!(
            "sweeping `{param}` regenerates data and needs a synthetic config, not CSVs"
        )));
    }
    ensure_dir(out_dir)?;

    let csv_path = out_dir.join("sweep.csv");
    let file = std::fs::File::create(&csv_path)
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(csv_path.display().to_string(), e);
    writeln!(out, "{param},total,many,median,few").map_err(io_err)?;

    for &value in values {
        let mut cfg = base.clone();
        match param {
            "lambda" => cfg.train.lambda = value,
            "tau" => cfg.train.tau = value,
            "eta" => cfg.train.eta = value,
            "delta" => cfg.delta = value,
            "ratio" => cfg.ratio = value,
            _ => unreachable!(),
        }
        let run_dir = out_dir.join(format!("{param}_{value}"));
        let artifacts = run_training(&cfg, &run_dir, false, false)?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{value},{},{},{},{}",
            artifacts.report.top1_total,
            cell(artifacts.report.top1_by_group.many),
            cell(artifacts.report.top1_by_group.median),
            cell(artifacts.report.top1_by_group.few),
        )
        .map_err(io_err)?;
        println!(
            "{param} = {value}: total {:.4}",
            artifacts.report.top1_total
        );
    }
    out.flush().map_err(io_err)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}
