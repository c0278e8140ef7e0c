//! Glue between datasets, decision rules and the metric suite: run a rule
//! over one split of an open-set view and score the result.

use crate::dataset::{OpenSetView, Split};
use crate::error::{OsrError, Result};
use crate::metrics::{evaluate_open_set, EvaluationReport};
use crate::openmax::{MethodSpec, OpenSetPrediction};

/// Predictions plus view labels for every sample of `split`, in row order.
pub fn split_predictions(
    view: &OpenSetView,
    split: Split,
    spec: &MethodSpec,
) -> Result<(Vec<OpenSetPrediction>, Vec<usize>)> {
    if let Some(dim) = spec.expected_dim() {
        if view.base().dim() != dim {
            return Err(OsrError::DimensionMismatch {
                expected: dim,
                actual: view.base().dim(),
            });
        }
    }
    let indices = view.split_indices(split);
    let mut predictions = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for idx in indices {
        let sample = &view.base().samples()[idx];
        predictions.push(spec.predict(&sample.activations)?);
        labels.push(view.view_label(idx));
    }
    Ok((predictions, labels))
}

/// Full metric report for one split under one decision rule.
pub fn evaluate_split(
    view: &OpenSetView,
    split: Split,
    spec: &MethodSpec,
) -> Result<EvaluationReport> {
    let (predictions, labels) = split_predictions(view, split, spec)?;
    if predictions.is_empty() {
        return Err(OsrError::InvalidConfig(format!(
            "no samples in split {split}"
        )));
    }
    evaluate_open_set(&predictions, &labels, spec.method(), view.label_names())
}

/// Open-set accuracy (fraction of matching view labels) for one split,
/// the hyperparameter search objective.
pub fn split_accuracy(view: &OpenSetView, split: Split, spec: &MethodSpec) -> Result<f64> {
    let (predictions, labels) = split_predictions(view, split, spec)?;
    if predictions.is_empty() {
        return Err(OsrError::InvalidConfig(format!(
            "no samples in split {split}"
        )));
    }
    let correct = predictions
        .iter()
        .zip(&labels)
        .filter(|(p, &t)| p.predicted_label == t)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}
