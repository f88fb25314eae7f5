//! Experiment CLI for the adaptive confusion energy regularizer.
//!
//! Subcommands: `gen-data`, `train`, `sweep`, `grad-check`, `stats`.
//! Exit codes: 0 success, 1 validation or config error, 2 numerical
//! failure, 3 I/O error.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::{ExperimentConfig, Preset};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "ace-lab",
    version,
    about = "Confusion-energy regularization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fine-grained / long-tailed dataset pair.
    GenData(GenDataArgs),
    /// Train a classifier and write checkpoint, log, report, and manifest.
    Train(TrainArgs),
    /// Train once per value of one parameter and consolidate a CSV table.
    Sweep(SweepArgs),
    /// Verify every analytic gradient against central finite differences.
    GradCheck(GradCheckArgs),
    /// Print imbalance and fine-grained statistics of a CSV dataset.
    Stats(StatsArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    meta: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Fine-grained scale (smaller = more similar classes).
    #[arg(long, default_value_t = 0.15)]
    delta: f64,
    /// Head-to-tail imbalance ratio.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    #[arg(long, default_value_t = 100)]
    max_count: usize,
    #[arg(long, default_value_t = 0.25)]
    noise_std: f64,
    #[arg(long, default_value_t = 25)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for train.csv, test.csv, stats.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigOverrides {
    /// Flat key=value config file; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hyperparameter regime applied after the file, before other flags.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    train_csv: Option<PathBuf>,
    #[arg(long)]
    test_csv: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    meta: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    max_count: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Hidden units of the MLP; 0 trains a linear classifier.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Learn the adaptive diagonal instead of freezing it.
    #[arg(long)]
    learnable_a: bool,
    /// instance_balanced, distinct_class, or class_balanced.
    #[arg(long)]
    sampler: Option<String>,
    /// ce_only, pc, or ace.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// percentile or absolute.
    #[arg(long)]
    group_mode: Option<String>,
    #[arg(long)]
    group_hi: Option<usize>,
    #[arg(long)]
    group_lo: Option<usize>,
    #[arg(long)]
    group_p_hi: Option<f64>,
    #[arg(long)]
    group_p_lo: Option<f64>,
}

impl ConfigOverrides {
    fn resolve(&self) -> ace_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(preset) = self.preset {
            cfg.apply_preset(preset);
        }
        macro_rules! override_key {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$field {
                    cfg.apply(stringify!($field), &v.to_string())?;
                })*
            };
        }
        if let Some(v) = &self.train_csv {
            cfg.apply("train_csv", &v.display().to_string())?;
        }
        if let Some(v) = &self.test_csv {
            cfg.apply("test_csv", &v.display().to_string())?;
        }
        override_key!(
            classes,
            meta,
            dim,
            delta,
            ratio,
            max_count,
            noise_std,
            test_per_class,
            hidden,
            epochs,
            batch_size,
            lr0,
            momentum,
            lambda,
            tau,
            eta,
            seed,
            group_hi,
            group_lo,
            group_p_hi,
            group_p_lo,
        );
        if self.learnable_a {
            cfg.apply("learnable_a", "true")?;
        }
        if let Some(v) = &self.sampler {
            cfg.apply("sampler", v)?;
        }
        if let Some(v) = &self.method {
            cfg.apply("method", v)?;
        }
        if let Some(v) = &self.group_mode {
            cfg.apply("group_mode", v)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Output directory for manifest, checkpoint, log, and report.
    #[arg(long)]
    out: PathBuf,
    /// Also run second-stage classifier retraining afterwards.
    #[arg(long)]
    crt: bool,
    /// Emit per-class accuracy and weight-norm rows as CSV.
    #[arg(long)]
    per_class_csv: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Parameter to sweep: lambda, tau, eta, delta, or ratio.
    #[arg(long)]
    param: String,
    /// Comma-separated values, e.g. `0,0.5,2,10`.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Output directory; the table lands in sweep.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
}

#[derive(Args)]
struct StatsArgs {
    /// CSV dataset with a `label,f0,f1,...` header.
    dataset: PathBuf,
}

fn run(cli: Cli) -> ace_core::Result<()> {
    match cli.command {
        Command::GenData(args) => {
            let train = ace_core::train::TrainConfig {
                seed: args.seed,
                ..Default::default()
            };
            let cfg = ExperimentConfig {
                classes: args.classes,
                meta: args.meta,
                dim: args.dim,
                delta: args.delta,
                ratio: args.ratio,
                max_count: args.max_count,
                noise_std: args.noise_std,
                test_per_class: args.test_per_class,
                train,
                ..ExperimentConfig::default()
            };
            commands::gen_data(&cfg, &args.out)
        }
        Command::Train(args) => {
            let cfg = args.overrides.resolve()?;
            commands::train_command(&cfg, &args.out, args.crt, args.per_class_csv)
        }
        Command::Sweep(args) => {
            let cfg = args.overrides.resolve()?;
            commands::sweep(&cfg, &args.param, &args.values, &args.out)
        }
        Command::GradCheck(args) => commands::grad_check(args.seed, args.trials),
        Command::Stats(args) => commands::stats(&args.dataset),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; real usage mistakes are
            // validation failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
