//! `osr`: open-set recognition pipelines over exported activation vectors.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration/validation error,
//! 3 training divergence, 4 calibration failure, 5 artifact/data mismatch,
//! 6 search exhaustion.

mod commands;
mod support;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use osr_core::OsrError;

#[derive(Parser)]
#[command(
    name = "osr",
    version,
    about = "Open-set recognition calibration and evaluation engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature dataset from a mixture spec
    Gen {
        /// Mixture spec JSON (dim, classes, optional known_classes)
        #[arg(long)]
        spec: PathBuf,
        /// Generation seed
        #[arg(long)]
        seed: u64,
        /// Stratified split ratios train,val,test (omit to leave unassigned)
        #[arg(long)]
        ratios: Option<String>,
        /// Seed for the within-class split shuffle
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Comma-separated known classes recorded in the manifest
        #[arg(long)]
        known: Option<String>,
        /// Output activation file (manifest written alongside)
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy linear classifier on known-class training rows
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Manifest path (default: <data>.manifest.json)
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated known classes (default: manifest, then all)
        #[arg(long)]
        known: Option<String>,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 0.0)]
        weight_decay: f64,
        /// Class-balanced loss smoothing (0 disables reweighting)
        #[arg(long, default_value_t = 0.999)]
        beta: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project a feature dataset through a trained classifier into logits
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Trained classifier JSON from `train`
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an OSR decision rule on the training split
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        known: Option<String>,
        /// softmax | softmax-threshold | openmax
        #[arg(long)]
        method: String,
        /// Weibull tail size (openmax)
        #[arg(long, default_value_t = 20)]
        tail: usize,
        /// Number of top classes recalibrated (openmax)
        #[arg(long, default_value_t = 1)]
        alpha: usize,
        /// Rejection threshold (openmax, default 0) or decision threshold
        /// (softmax-threshold, default 0.5)
        #[arg(long)]
        threshold: Option<f64>,
        /// euclidean | cosine | eucos
        #[arg(long, default_value = "euclidean")]
        distance: String,
        /// Euclidean scale for eucos
        #[arg(long, default_value_t = 200.0)]
        gamma: f64,
        /// Shrink oversized tails to the class's correct-sample count
        #[arg(long)]
        clamp_tail: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a decision rule on one split and emit the metric report
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated known classes (default: manifest, then all)
        #[arg(long)]
        known: Option<String>,
        /// Decision-rule artifact from `calibrate` or `tune`
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Row label used by `report` (default: data file stem)
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Confusion CSV path (default: <out>.confusion.csv)
        #[arg(long)]
        confusion_out: Option<PathBuf>,
    },
    /// Search OSR hyperparameters, maximizing validation accuracy
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        known: Option<String>,
        /// softmax-threshold | openmax
        #[arg(long)]
        method: String,
        /// grid | random
        #[arg(long, default_value = "grid")]
        search: String,
        /// Grid resolution per parameter, or random trial count
        #[arg(long, default_value_t = 5)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override tail bounds, e.g. 20:400
        #[arg(long)]
        tail_range: Option<String>,
        /// Override alpha bounds, e.g. 1:3
        #[arg(long)]
        alpha_range: Option<String>,
        /// Override threshold bounds, e.g. 0.6:0.99
        #[arg(long)]
        threshold_range: Option<String>,
        #[arg(long, default_value = "euclidean")]
        distance: String,
        #[arg(long, default_value_t = 200.0)]
        gamma: f64,
        #[arg(long)]
        clamp_tail: bool,
        #[arg(long, default_value = "train")]
        calibration_split: String,
        #[arg(long, default_value = "val")]
        val_split: String,
        /// Best-trial JSON (trial log and model artifact written alongside)
        #[arg(long)]
        out: PathBuf,
        /// Trial log path (default: <out>.trials.jsonl)
        #[arg(long)]
        log: Option<PathBuf>,
        /// Tuned model artifact path (default: <out>.model.json)
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Merge evaluation reports into a comparison table (CSV + Markdown)
    Report {
        /// Evaluation JSON files from `evaluate`
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_csv: Option<PathBuf>,
        #[arg(long)]
        out_md: Option<PathBuf>,
    },
}

fn exit_code(error: &OsrError) -> i32 {
    match error {
        OsrError::Io(_) => 1,
        OsrError::Json(_)
        | OsrError::DataFormat { .. }
        | OsrError::InvalidDataset(_)
        | OsrError::InvalidConfig(_)
        | OsrError::EmptyClass { .. }
        | OsrError::LabelOutOfRange { .. }
        | OsrError::LengthMismatch { .. }
        | OsrError::SingleClassScores
        | OsrError::NoPositiveSamples
        | OsrError::UnsupportedFormat { .. } => 2,
        OsrError::Divergence { .. } => 3,
        OsrError::Calibration { .. }
        | OsrError::InsufficientTail { .. }
        | OsrError::DegenerateTail { .. }
        | OsrError::NoConvergence { .. }
        | OsrError::NoCorrectSamples { .. }
        | OsrError::ZeroVector => 4,
        OsrError::DimensionMismatch { .. } => 5,
        OsrError::SearchExhausted { .. } => 6,
        OsrError::ObjectiveFailed { source, .. } => exit_code(source),
    }
}

fn run(cli: Cli) -> Result<(), OsrError> {
    match cli.command {
        Command::Gen {
            spec,
            seed,
            ratios,
            split_seed,
            known,
            out,
        } => commands::cmd_gen(&commands::GenArgs {
            spec,
            seed,
            ratios,
            split_seed,
            known,
            out,
        }),
        Command::Train {
            data,
            manifest,
            known,
            lr,
            epochs,
            batch,
            weight_decay,
            beta,
            seed,
            out,
        } => commands::cmd_train(&commands::TrainArgs {
            data,
            manifest,
            known,
            learning_rate: lr,
            epochs,
            batch_size: batch,
            weight_decay,
            beta,
            seed,
            out,
        }),
        Command::Predict {
            data,
            manifest,
            model,
            out,
        } => commands::cmd_predict(&commands::PredictArgs {
            data,
            manifest,
            model,
            out,
        }),
        Command::Calibrate {
            data,
            manifest,
            known,
            method,
            tail,
            alpha,
            threshold,
            distance,
            gamma,
            clamp_tail,
            out,
        } => commands::cmd_calibrate(&commands::CalibrateArgs {
            data,
            manifest,
            known,
            method,
            tail,
            alpha,
            threshold,
            distance,
            gamma,
            clamp_tail,
            out,
        }),
        Command::Evaluate {
            data,
            manifest,
            known,
            model,
            split,
            label,
            out,
            confusion_out,
        } => commands::cmd_evaluate(&commands::EvaluateArgs {
            data,
            manifest,
            known,
            model,
            split,
            label,
            out,
            confusion_out,
        }),
        Command::Tune {
            data,
            manifest,
            known,
            method,
            search,
            budget,
            seed,
            tail_range,
            alpha_range,
            threshold_range,
            distance,
            gamma,
            clamp_tail,
            calibration_split,
            val_split,
            out,
            log,
            model_out,
        } => commands::cmd_tune(&commands::TuneArgs {
            data,
            manifest,
            known,
            method,
            search,
            budget,
            seed,
            tail_range,
            alpha_range,
            threshold_range,
            distance,
            gamma,
            clamp_tail,
            calibration_split,
            val_split,
            out,
            log,
            model_out,
        }),
        Command::Report {
            inputs,
            out_csv,
            out_md,
        } => commands::cmd_report(&commands::ReportArgs {
            inputs,
            out_csv,
            out_md,
        }),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = run(cli) {
        eprintln!("error: {error}");
        let mut source = std::error::Error::source(&error);
        while let Some(cause) = source {
            eprintln!("  caused by: {cause}");
            source = cause.source();
        }
        std::process::exit(exit_code(&error));
    }
}
