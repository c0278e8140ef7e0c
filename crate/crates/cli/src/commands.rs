//! Implementations of the `osr` subcommands.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::json;

use osr_core::dataset::{
    apply_openset_protocol, split_dataset, write_dataset, ActivationDataset, Manifest, Split,
};
use osr_core::eval::evaluate_split;
use osr_core::hpo::{default_space, tune_osr, SearchStrategy, TuneConfig};
use osr_core::metrics::EvaluationReport;
use osr_core::openmax::{
    artifact_from_str, artifact_to_string, calibrate_openmax, DistanceKind, Method, MethodSpec,
    OpenMaxParams,
};
use osr_core::toy::{
    class_balanced_weights, extract_logits, generate_mixture, train_toy_classifier, MixtureSpec,
    TrainConfig,
};
use osr_core::{OsrError, Result};

use crate::support::{
    default_manifest_path, input_stamp, load_data, parse_range, parse_ratios, parse_split,
    resolve_known, sibling_with_suffix, tool_stamp, write_atomic, ClassifierDoc, DOC_FORMAT,
};

/// Inputs must exist at validation time; a missing input is a configuration
/// error (exit 2), not an I/O failure (exit 1).
fn require_input(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(OsrError::InvalidConfig(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

fn write_dataset_atomic(ds: &ActivationDataset, path: &Path) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write_dataset(ds, &tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_distance(name: &str, gamma: f64) -> Result<DistanceKind> {
    match name {
        "euclidean" => Ok(DistanceKind::Euclidean),
        "cosine" => Ok(DistanceKind::Cosine),
        "eucos" => {
            if !(gamma.is_finite() && gamma > 0.0) {
                return Err(OsrError::InvalidConfig(format!(
                    "gamma must be a positive real, got {gamma}"
                )));
            }
            Ok(DistanceKind::Eucos { gamma })
        }
        other => Err(OsrError::InvalidConfig(format!(
            "unknown distance {other:?} (euclidean|cosine|eucos)"
        ))),
    }
}

fn parse_method(name: &str) -> Result<Method> {
    Method::parse(name).ok_or_else(|| {
        OsrError::InvalidConfig(format!(
            "unknown method {name:?} (softmax|softmax-threshold|openmax)"
        ))
    })
}

// ---- gen -------------------------------------------------------------------

pub struct GenArgs {
    pub spec: PathBuf,
    pub seed: u64,
    pub ratios: Option<String>,
    pub split_seed: u64,
    pub known: Option<String>,
    pub out: PathBuf,
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    require_input(&args.spec)?;
    let text = std::fs::read_to_string(&args.spec)?;
    let spec: MixtureSpec = serde_json::from_str(&text)?;
    let mut ds = generate_mixture(&spec, args.seed)?;
    if let Some(ratios) = &args.ratios {
        ds = split_dataset(&ds, parse_ratios(ratios)?, args.split_seed)?;
    }

    let known_classes: Option<Vec<String>> = match (&args.known, &spec.known_classes) {
        (Some(flag), _) => Some(flag.split(',').map(|s| s.trim().to_string()).collect()),
        (None, Some(from_spec)) => Some(from_spec.clone()),
        (None, None) => None,
    };
    if let Some(known) = &known_classes {
        for name in known {
            if !ds.class_names().contains(name) {
                return Err(OsrError::InvalidConfig(format!(
                    "known class {name:?} is not a mixture class"
                )));
            }
        }
    }
    let manifest = Manifest {
        class_names: ds.class_names().to_vec(),
        dim: ds.dim(),
        known_classes,
    };

    write_dataset_atomic(&ds, &args.out)?;
    let manifest_path = default_manifest_path(&args.out);
    let manifest_text = serde_json::to_string_pretty(&manifest)? + "\n";
    write_atomic(&manifest_path, manifest_text.as_bytes())?;

    println!(
        "wrote {} samples x {} dims over {} classes to {}",
        ds.len(),
        ds.dim(),
        ds.class_count(),
        args.out.display()
    );
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

// ---- train -----------------------------------------------------------------

pub struct TrainArgs {
    pub data: PathBuf,
    pub manifest: Option<PathBuf>,
    pub known: Option<String>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta: f64,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    require_input(&args.data)?;
    let (ds, manifest, _) = load_data(&args.data, args.manifest.as_deref())?;
    let known = resolve_known(args.known.as_deref(), &manifest, true)?;
    let view = apply_openset_protocol(&ds, &known)?;
    let rows = view.known_indices(Split::Train);
    if rows.is_empty() {
        return Err(OsrError::InvalidConfig(
            "no known-class samples in the train split (did you gen with --ratios?)".into(),
        ));
    }
    let features: Vec<Vec<f64>> = rows
        .iter()
        .map(|&(i, _)| ds.samples()[i].activations.clone())
        .collect();
    let labels: Vec<usize> = rows.iter().map(|&(_, k)| k).collect();
    let mut counts = vec![0usize; known.len()];
    for &y in &labels {
        counts[y] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(OsrError::EmptyClass {
            class: known[empty].clone(),
        });
    }
    let class_weights = class_balanced_weights(&counts, args.beta)?;

    let config = TrainConfig {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        weight_decay: args.weight_decay,
        seed: args.seed,
    };
    let (classifier, trace) = train_toy_classifier(&features, &labels, &class_weights, &config)?;
    let accuracy = classifier.accuracy(&features, &labels);

    let doc = ClassifierDoc {
        format: DOC_FORMAT,
        known_classes: known.clone(),
        feature_dim: ds.dim(),
        classifier,
    };
    doc.save(&args.out)?;

    match trace.last() {
        Some(loss) => println!(
            "trained {} classes on {} samples: final loss {loss:.6}, training accuracy {accuracy:.4}",
            known.len(),
            features.len()
        ),
        None => println!("zero epochs requested: model equals initialization"),
    }
    println!("model: {}", args.out.display());
    Ok(())
}

// ---- predict ---------------------------------------------------------------

pub struct PredictArgs {
    pub data: PathBuf,
    pub manifest: Option<PathBuf>,
    pub model: PathBuf,
    pub out: PathBuf,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    require_input(&args.data)?;
    require_input(&args.model)?;
    let (ds, _, _) = load_data(&args.data, args.manifest.as_deref())?;
    let doc = ClassifierDoc::load(&args.model)?;
    let logits = extract_logits(&doc.classifier, &ds)?;

    write_dataset_atomic(&logits, &args.out)?;
    let manifest = Manifest {
        class_names: logits.class_names().to_vec(),
        dim: logits.dim(),
        known_classes: Some(doc.known_classes.clone()),
    };
    let manifest_path = default_manifest_path(&args.out);
    let manifest_text = serde_json::to_string_pretty(&manifest)? + "\n";
    write_atomic(&manifest_path, manifest_text.as_bytes())?;

    println!(
        "wrote logits for {} samples ({} known classes) to {}",
        logits.len(),
        logits.dim(),
        args.out.display()
    );
    Ok(())
}

// ---- calibrate -------------------------------------------------------------

pub struct CalibrateArgs {
    pub data: PathBuf,
    pub manifest: Option<PathBuf>,
    pub known: Option<String>,
    pub method: String,
    pub tail: usize,
    pub alpha: usize,
    pub threshold: Option<f64>,
    pub distance: String,
    pub gamma: f64,
    pub clamp_tail: bool,
    pub out: PathBuf,
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    require_input(&args.data)?;
    let (ds, manifest, _) = load_data(&args.data, args.manifest.as_deref())?;
    let method = parse_method(&args.method)?;

    let artifact = match method {
        Method::Softmax => MethodSpec::Softmax,
        Method::SoftmaxThreshold => MethodSpec::SoftmaxThreshold {
            theta: args.threshold.unwrap_or(0.5),
        },
        Method::OpenMax => {
            let known = resolve_known(args.known.as_deref(), &manifest, true)?;
            let view = apply_openset_protocol(&ds, &known)?;
            let params = OpenMaxParams {
                tail_size: args.tail,
                alpha: args.alpha,
                threshold: args.threshold.unwrap_or(0.0),
                distance: parse_distance(&args.distance, args.gamma)?,
                clamp_tail: args.clamp_tail,
            };
            let model = calibrate_openmax(&view, Split::Train, &params)?;
            MethodSpec::OpenMax(model)
        }
    };

    write_atomic(&args.out, artifact_to_string(&artifact)?.as_bytes())?;
    match &artifact {
        MethodSpec::OpenMax(model) => println!(
            "calibrated openmax over {} classes (tails {:?})",
            model.known_count(),
            model
                .weibulls
                .iter()
                .map(|w| w.tail_size)
                .collect::<Vec<_>>()
        ),
        other => println!("wrote {} rule", other.method()),
    }
    println!("artifact: {}", args.out.display());
    Ok(())
}

// ---- evaluate --------------------------------------------------------------

pub struct EvaluateArgs {
    pub data: PathBuf,
    pub manifest: Option<PathBuf>,
    pub known: Option<String>,
    pub model: PathBuf,
    pub split: String,
    pub label: Option<String>,
    pub out: PathBuf,
    pub confusion_out: Option<PathBuf>,
}

/// On-disk shape of an evaluation report document.
#[derive(Debug, Deserialize)]
pub struct ReportDoc {
    pub format: u32,
    pub label: String,
    pub method: String,
    pub split: String,
    pub report: EvaluationReport,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    require_input(&args.data)?;
    require_input(&args.model)?;
    let (ds, manifest, manifest_path) = load_data(&args.data, args.manifest.as_deref())?;
    let known = resolve_known(args.known.as_deref(), &manifest, true)?;
    let view = apply_openset_protocol(&ds, &known)?;
    let split = parse_split(&args.split)?;

    let artifact = artifact_from_str(&std::fs::read_to_string(&args.model)?)?;
    if let MethodSpec::OpenMax(model) = &artifact {
        if model.known_count() != view.known_count() {
            return Err(OsrError::DimensionMismatch {
                expected: model.known_count(),
                actual: view.known_count(),
            });
        }
    }
    let report = evaluate_split(&view, split, &artifact)?;

    let label = args.label.clone().unwrap_or_else(|| {
        args.data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    });
    let doc = json!({
        "format": DOC_FORMAT,
        "label": label,
        "method": artifact.method().as_str(),
        "split": split.as_str(),
        "report": report,
        "provenance": {
            "tool": tool_stamp(),
            "inputs": {
                "data": input_stamp(&args.data)?,
                "manifest": input_stamp(&manifest_path)?,
                "model": input_stamp(&args.model)?,
            },
            "parameters": { "split": split.as_str() },
        },
    });
    write_atomic(
        &args.out,
        (serde_json::to_string_pretty(&doc)? + "\n").as_bytes(),
    )?;
    let confusion_path = args
        .confusion_out
        .clone()
        .unwrap_or_else(|| sibling_with_suffix(&args.out, "confusion.csv"));
    write_atomic(&confusion_path, report.confusion.to_csv().as_bytes())?;

    println!(
        "{} on {}: accuracy {:.4}, mcc {:.4}, auroc {}, aupr-out {}",
        artifact.method(),
        split,
        report.accuracy,
        report.mcc,
        report.auroc.map_or("n/a".into(), |v| format!("{v:.4}")),
        report.aupr_out.map_or("n/a".into(), |v| format!("{v:.4}")),
    );
    println!("report: {}", args.out.display());
    println!("confusion: {}", confusion_path.display());
    Ok(())
}

// ---- tune ------------------------------------------------------------------

pub struct TuneArgs {
    pub data: PathBuf,
    pub manifest: Option<PathBuf>,
    pub known: Option<String>,
    pub method: String,
    pub search: String,
    pub budget: usize,
    pub seed: u64,
    pub tail_range: Option<String>,
    pub alpha_range: Option<String>,
    pub threshold_range: Option<String>,
    pub distance: String,
    pub gamma: f64,
    pub clamp_tail: bool,
    pub calibration_split: String,
    pub val_split: String,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
}

pub fn cmd_tune(args: &TuneArgs) -> Result<()> {
    require_input(&args.data)?;
    let (ds, manifest, manifest_path) = load_data(&args.data, args.manifest.as_deref())?;
    let known = resolve_known(args.known.as_deref(), &manifest, true)?;
    let view = apply_openset_protocol(&ds, &known)?;
    let method = parse_method(&args.method)?;

    let mut space = default_space(method)?;
    if method == Method::OpenMax {
        if let Some(range) = &args.tail_range {
            let (lo, hi) = parse_range(range)?;
            space.set_bounds("weibull_tail", lo, hi)?;
        }
        match &args.alpha_range {
            Some(range) => {
                let (lo, hi) = parse_range(range)?;
                space.set_bounds("weibull_alpha", lo, hi)?;
            }
            // Table 1 gives alpha 1..3; a view with fewer known classes
            // caps the default at its class count.
            None => {
                let hi = view.known_count().min(3) as f64;
                space.set_bounds("weibull_alpha", 1.0, hi)?;
            }
        }
        if let Some(range) = &args.threshold_range {
            let (lo, hi) = parse_range(range)?;
            space.set_bounds("weibull_threshold", lo, hi)?;
        }
    } else if let Some(range) = &args.threshold_range {
        let (lo, hi) = parse_range(range)?;
        space.set_bounds("softmax_threshold", lo, hi)?;
    }

    let strategy = match args.search.as_str() {
        "grid" => SearchStrategy::Grid {
            resolution: args.budget,
        },
        "random" => SearchStrategy::Random {
            trials: args.budget,
        },
        other => {
            return Err(OsrError::InvalidConfig(format!(
                "unknown search strategy {other:?} (grid|random)"
            )))
        }
    };

    let config = TuneConfig {
        method,
        space,
        strategy,
        seed: args.seed,
        calibration_split: parse_split(&args.calibration_split)?,
        validation_split: parse_split(&args.val_split)?,
        distance: parse_distance(&args.distance, args.gamma)?,
        clamp_tail: args.clamp_tail,
    };
    let outcome = tune_osr(&view, &config)?;

    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| sibling_with_suffix(&args.out, "trials.jsonl"));
    let model_path = args
        .model_out
        .clone()
        .unwrap_or_else(|| sibling_with_suffix(&args.out, "model.json"));

    write_atomic(
        &log_path,
        osr_core::hpo::trial_log_to_string(&outcome.log).as_bytes(),
    )?;
    write_atomic(
        &model_path,
        artifact_to_string(&outcome.artifact)?.as_bytes(),
    )?;

    let params: serde_json::Map<String, serde_json::Value> = outcome
        .best
        .params
        .iter()
        .map(|(name, value)| (name.clone(), serde_json::to_value(value).unwrap()))
        .collect();
    let failed = outcome.log.iter().filter(|r| r.objective.is_none()).count();
    let doc = json!({
        "format": DOC_FORMAT,
        "method": method.as_str(),
        "best": {
            "trial": outcome.best.trial_index,
            "seed": outcome.best.seed,
            "params": params,
            "objective": outcome.best.objective,
        },
        "trials": outcome.log.len(),
        "failed_trials": failed,
        "provenance": {
            "tool": tool_stamp(),
            "inputs": {
                "data": input_stamp(&args.data)?,
                "manifest": input_stamp(&manifest_path)?,
            },
            "parameters": {
                "search": args.search,
                "budget": args.budget,
                "seed": args.seed,
                "calibration_split": args.calibration_split,
                "validation_split": args.val_split,
            },
        },
    });
    write_atomic(
        &args.out,
        (serde_json::to_string_pretty(&doc)? + "\n").as_bytes(),
    )?;

    let best_params: Vec<String> = outcome
        .best
        .params
        .iter()
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    println!(
        "best of {} trials ({failed} failed): {} -> validation accuracy {:.4}",
        outcome.log.len(),
        best_params.join(", "),
        outcome.best.objective
    );
    println!("best: {}", args.out.display());
    println!("trials: {}", log_path.display());
    println!("model: {}", model_path.display());
    Ok(())
}

// ---- report ----------------------------------------------------------------

pub struct ReportArgs {
    pub inputs: Vec<PathBuf>,
    pub out_csv: Option<PathBuf>,
    pub out_md: Option<PathBuf>,
}

fn fmt_pct(value: f64) -> String {
    format!("{:.1}", value * 100.0)
}

fn fmt_opt_pct(value: Option<f64>) -> String {
    value.map_or_else(|| "-".into(), fmt_pct)
}

fn fmt_opt_raw(value: Option<f64>) -> String {
    value.map_or_else(String::new, |v| format!("{v}"))
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    if args.inputs.is_empty() {
        return Err(OsrError::InvalidConfig(
            "report needs at least one evaluation JSON".into(),
        ));
    }
    let mut docs = Vec::new();
    for path in &args.inputs {
        require_input(path)?;
        let doc: ReportDoc = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if doc.format != DOC_FORMAT {
            return Err(OsrError::UnsupportedFormat {
                found: doc.format,
                expected: DOC_FORMAT,
            });
        }
        docs.push(doc);
    }

    let mut csv = String::from(
        "label,method,split,accuracy,precision_macro,precision_micro,recall_macro,\
         recall_micro,f1_macro,f1_micro,mcc,auroc,aupr_out\n",
    );
    for doc in &docs {
        let r = &doc.report;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            doc.label,
            doc.method,
            doc.split,
            r.accuracy,
            r.precision.macro_avg,
            r.precision.micro_avg,
            r.recall.macro_avg,
            r.recall.micro_avg,
            r.f1.macro_avg,
            r.f1.micro_avg,
            r.mcc,
            fmt_opt_raw(r.auroc),
            fmt_opt_raw(r.aupr_out),
        ));
    }

    let mut md = String::new();
    md.push_str(
        "| Label | Method | Acc. | Precision | Recall | F1-Score | MCC | AUROC | AUPR-OUT |\n",
    );
    md.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for doc in &docs {
        let r = &doc.report;
        md.push_str(&format!(
            "| {} | {} | {} | {}/{} | {}/{} | {}/{} | {} | {} | {} |\n",
            doc.label,
            doc.method,
            fmt_pct(r.accuracy),
            fmt_pct(r.precision.macro_avg),
            fmt_pct(r.precision.micro_avg),
            fmt_pct(r.recall.macro_avg),
            fmt_pct(r.recall.micro_avg),
            fmt_pct(r.f1.macro_avg),
            fmt_pct(r.f1.micro_avg),
            fmt_pct(r.mcc),
            fmt_opt_pct(r.auroc),
            fmt_opt_pct(r.aupr_out),
        ));
    }

    if let Some(path) = &args.out_csv {
        write_atomic(path, csv.as_bytes())?;
        println!("csv: {}", path.display());
    }
    if let Some(path) = &args.out_md {
        write_atomic(path, md.as_bytes())?;
        println!("markdown: {}", path.display());
    }
    if args.out_csv.is_none() && args.out_md.is_none() {
        print!("{md}");
    }
    Ok(())
}
