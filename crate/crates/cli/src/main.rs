//! `polypseg` — configuration-driven CLI for the polyp segmentation toolkit.
//!
//! Subcommands: `prepare` (scan + split into a manifest), `train`,
//! `evaluate`, `predict`, `compare`, `list-encoders`. Every subcommand takes
//! `--config <file>` plus repeatable `--set key=value` overrides.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 runtime/numeric error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polypseg::config::{ConfigError, ExperimentConfig};
use polypseg::dataset::{self, DatasetError, Split};
use polypseg::models::{self, ModelError, SegmentationModel};
use polypseg::report::{self, EvalError, MetricsReport};
use polypseg::trainer::{self, TrainError};

#[derive(Parser)]
#[command(name = "polypseg", version, about = "Binary polyp segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config file (flat `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=1` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Scan the dataset, carve the seeded split, write the manifest CSV.
    Prepare(ConfigArgs),
    /// Train the configured model on the manifest's train split.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a split and write report files.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint path (default: `<output>/<encoder>/checkpoints/best.ckpt`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split to evaluate.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Predict a mask for one image and write it at original resolution.
    Predict {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Combine report.json files into a comparison table (CSV).
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Paths to report.json files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Append the published per-model reference rows.
        #[arg(long)]
        reference: bool,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// List the registered encoder backbones.
    ListEncoders,
}

enum CliError {
    Config(ConfigError),
    Data(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    fn message(&self) -> String {
        let msg = match self {
            CliError::Config(e) => e.to_string(),
            CliError::Data(m) | CliError::Runtime(m) => m.clone(),
        };
        msg.replace('\n', " ")
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => CliError::Runtime(m.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Dataset(d) => CliError::Data(d.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if !args.overrides.is_empty() {
        // Re-parse through the same code path so overrides get identical
        // validation and error naming.
        let mut text = cfg.to_config_string();
        for item in &args.overrides {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                CliError::Config(ConfigError::InvalidValue {
                    key: item.clone(),
                    reason: "override must be KEY=VALUE".to_string(),
                })
            })?;
            text.push_str(&format!("{} = {}\n", k.trim(), v.trim()));
        }
        cfg = ExperimentConfig::parse(&text)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_prepare(args: &ConfigArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let root = cfg.require_dataset_root()?;
    let manifest = dataset::scan_dataset(root)?;
    let split = dataset::split_manifest(
        &manifest,
        cfg.test_fraction,
        cfg.val_fraction_of_trainval,
        cfg.split_seed,
    )?;
    dataset::save_manifest(&split, &cfg.manifest_path)?;
    println!(
        "manifest: {} entries -> train {} / val {} / test {} (seed {}) at {}",
        split.len(),
        split.ids_in_split(Split::Train).len(),
        split.ids_in_split(Split::Val).len(),
        split.ids_in_split(Split::Test).len(),
        cfg.split_seed,
        cfg.manifest_path.display()
    );
    Ok(())
}

fn build_model_from_config(cfg: &ExperimentConfig) -> Result<SegmentationModel<f32>, CliError> {
    Ok(models::build_model_with::<f32>(
        &cfg.encoder,
        cfg.preprocess.network_input,
        cfg.pretrained,
        cfg.model_seed,
        &cfg.model_options(),
    )?)
}

fn cmd_train(args: &ConfigArgs, resume: Option<&PathBuf>) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    cfg.require_dataset_root()?;
    let manifest = dataset::load_manifest(&cfg.manifest_path)?;
    let train_cfg = cfg.train_config();
    let (best, history) = match resume {
        Some(ckpt) => trainer::resume(ckpt, &manifest, &train_cfg, &cfg.encoder)?,
        None => {
            let mut model = build_model_from_config(&cfg)?;
            trainer::train(&mut model, &manifest, &train_cfg)?
        }
    };
    println!(
        "best checkpoint: {} (epoch {}, val_dice {:.4})",
        best.path.display(),
        best.epoch,
        history.best_val_dice().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn default_checkpoint(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join(&cfg.encoder).join("checkpoints").join("best.ckpt")
}

fn cmd_evaluate(args: &ConfigArgs, checkpoint: Option<&PathBuf>, split: &str) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let split: Split = split
        .parse()
        .map_err(|e: String| CliError::Config(ConfigError::InvalidValue { key: "--split".into(), reason: e }))?;
    let manifest = dataset::load_manifest(&cfg.manifest_path)?;
    let ckpt_path = checkpoint.cloned().unwrap_or_else(|| default_checkpoint(&cfg));
    let (mut model, _, _) = models::load_checkpoint(&ckpt_path)?;
    let report = report::evaluate(
        &mut model,
        &manifest,
        split,
        &cfg.preprocess,
        cfg.threshold,
        &cfg.encoder,
        &cfg.hash(),
    )?;
    let dir = report::write_report_files(&report, &cfg.output_dir)?;
    let m = &report.aggregate_mean;
    let p = &report.aggregate_pooled;
    println!(
        "{} on {split}: n={} mean dice {:.2}% jaccard {:.2}% accuracy {:.2}% | pooled dice {:.2}% jaccard {:.2}% accuracy {:.2}% -> {}",
        cfg.encoder,
        report.n_test,
        m.dice * 100.0,
        m.jaccard * 100.0,
        m.accuracy * 100.0,
        p.dice * 100.0,
        p.jaccard * 100.0,
        p.accuracy * 100.0,
        dir.display()
    );
    Ok(())
}

fn cmd_predict(
    args: &ConfigArgs,
    image: &PathBuf,
    output: &PathBuf,
    checkpoint: Option<&PathBuf>,
) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let ckpt_path = checkpoint.cloned().unwrap_or_else(|| default_checkpoint(&cfg));
    let (mut model, _, _) = models::load_checkpoint(&ckpt_path)?;
    report::predict_mask_file(&mut model, image, output, &cfg.preprocess, cfg.threshold)?;
    println!("mask written to {}", output.display());
    Ok(())
}

fn cmd_compare(
    args: &ConfigArgs,
    reports: &[PathBuf],
    reference: bool,
    output: Option<&PathBuf>,
) -> Result<(), CliError> {
    let _cfg = load_config(args)?;
    let mut loaded: Vec<MetricsReport> = Vec::with_capacity(reports.len());
    for path in reports {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read report {}: {e}", path.display())))?;
        loaded.push(
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("malformed report {}: {e}", path.display())))?,
        );
    }
    let refs: Vec<&MetricsReport> = loaded.iter().collect();
    let rows = report::compare(&refs, reference);
    let csv = report::compare_to_csv(&rows);
    match output {
        Some(path) => std::fs::write(path, &csv)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_list_encoders() {
    for spec in models::list_encoders() {
        println!(
            "{:<20} taps {:?} channels {:?}",
            spec.name,
            spec.taps,
            spec.tap_channels
        );
    }
    println!("{:<20} (baseline)", models::UNET_BASELINE);
    println!("{:<20} (baseline)", models::SEGNET_BASELINE);
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train { config, resume } => cmd_train(config, resume.as_ref()),
        Command::Evaluate { config, checkpoint, split } => cmd_evaluate(config, checkpoint.as_ref(), split),
        Command::Predict { config, image, output, checkpoint } => {
            cmd_predict(config, image, output, checkpoint.as_ref())
        }
        Command::Compare { config, reports, reference, output } => {
            cmd_compare(config, reports, *reference, output.as_ref())
        }
        Command::ListEncoders => {
            cmd_list_encoders();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("polypseg: error[E{}]: {}", e.code(), e.message());
            ExitCode::from(e.code())
        }
    }
}
