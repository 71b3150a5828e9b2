//! `tempofuse` — dataset synthesis, preprocessing, training, evaluation,
//! inference, gradient checking, and attribution export.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tempofuse_core::config::RunConfig;
use tempofuse_core::error::Error;

#[derive(Parser)]
#[command(name = "tempofuse", version, about = "Per-sample multiclass labeling of 1D signals")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Repeatable `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Shortcut for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multi-rhythm records into the data directory.
    Synth,
    /// Resample, filter, window, and normalize records into a dataset cache.
    Preprocess {
        /// Output cache path (default `<out_dir>/dataset.tfds`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a dataset cache; writes per-epoch/best/final checkpoints.
    Train {
        /// Dataset cache path (default `<out_dir>/dataset.tfds`).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: forward → argmax → postprocess → metrics.
    Eval {
        /// Checkpoint path (default `<out_dir>/checkpoints/best.tfcp`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Which fold split to score: train, val, or all.
        #[arg(long, default_value = "val")]
        split: String,
        /// Feed ground-truth labels as predictions (oracle bypass).
        #[arg(long)]
        oracle_labels: bool,
    },
    /// Run a checkpoint over one signal file; writes an event CSV.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Signal CSV to label.
        #[arg(long)]
        signal: PathBuf,
        /// Window stride in samples (default: one window length).
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Finite-difference gradient suite on the reduced-width configuration.
    Gradcheck,
    /// Export a per-time-step attribution heatmap for one dataset window.
    Gradcam {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Window index within the dataset.
        #[arg(long)]
        window: usize,
        /// Target class id (default: the window's dominant class).
        #[arg(long)]
        class: Option<u16>,
        /// Target span `start:end` in samples (default: the longest event of
        /// the target class).
        #[arg(long)]
        span: Option<String>,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for assignment in &cli.set {
        cfg.apply_override(assignment)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = build_config(cli)?;
    match &cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Preprocess { out } => commands::preprocess(&cfg, out.as_deref()),
        Command::Train { dataset } => commands::train(&cfg, dataset.as_deref()),
        Command::Eval { checkpoint, dataset, split, oracle_labels } => {
            commands::eval(&cfg, checkpoint.as_deref(), dataset.as_deref(), split, *oracle_labels)
        }
        Command::Infer { checkpoint, signal, stride } => {
            commands::infer(&cfg, checkpoint.as_deref(), signal, *stride)
        }
        Command::Gradcheck => commands::gradcheck(&cfg),
        Command::Gradcam { checkpoint, dataset, window, class, span } => {
            commands::gradcam(&cfg, checkpoint.as_deref(), dataset.as_deref(), *window, *class, span.as_deref())
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Contract { .. } | Error::Shape { .. } | Error::Unsupported(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Config(_) | Error::Contract { .. } | Error::Shape { .. } | Error::Unsupported(_) => "config",
        Error::Data(_) | Error::Io(_) => "data",
        Error::Numeric(_) => "numeric",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", error_kind(&err));
            ExitCode::from(exit_code_for(&err))
        }
    }
}
