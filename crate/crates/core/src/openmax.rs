//! Decision rules for open-set recognition: plain softmax, softmax with a
//! rejection threshold, and OpenMax activation recalibration backed by
//! per-class extreme-value models of distance to the class centroid.

use serde::{Deserialize, Serialize};

use crate::dataset::{OpenSetView, Split};
use crate::error::{OsrError, Result};
use crate::weibull::{fit_weibull_tail, WeibullModel};

/// Default scale applied to the Euclidean term of the eucos distance.
pub const DEFAULT_GAMMA: f64 = 200.0;

/// Artifact schema version for serialized models.
pub const ARTIFACT_FORMAT: u32 = 1;

/// Distance between an activation vector and a class centroid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Euclidean,
    Cosine,
    Eucos {
        gamma: f64,
    },
}

/// The three decision rules evaluated by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Softmax,
    SoftmaxThreshold,
    #[serde(rename = "openmax")]
    OpenMax,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Softmax => "softmax",
            Method::SoftmaxThreshold => "softmax-threshold",
            Method::OpenMax => "openmax",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "softmax" => Some(Method::Softmax),
            "softmax-threshold" | "softmax_threshold" => Some(Method::SoftmaxThreshold),
            "openmax" => Some(Method::OpenMax),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-sample open-set output: probabilities over `{unknown} ∪ knowns`,
/// the decided label (0 = unknown) and the method's unknown-ness score.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetPrediction {
    /// Length `K_known + 1`; slot 0 is the unknown class. Sums to 1.
    pub probs: Vec<f64>,
    /// Index into `probs`; 0 rejects the sample as unknown.
    pub predicted_label: usize,
    /// Ranking score for unknown detection, in `[0, 1]`.
    pub score_unknown: f64,
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "softmax of an empty vector");
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Plain softmax decision: never rejects. Slot 0 carries probability zero
/// and the unknown-ness score is one minus the winning probability.
pub fn predict_softmax(v: &[f64]) -> OpenSetPrediction {
    let sm = softmax(v);
    let best = argmax(&sm);
    let score_unknown = 1.0 - sm[best];
    let mut probs = Vec::with_capacity(sm.len() + 1);
    probs.push(0.0);
    probs.extend(sm);
    OpenSetPrediction {
        probs,
        predicted_label: best + 1,
        score_unknown,
    }
}

/// Softmax with rejection: the sample is declared unknown when the winning
/// probability falls strictly below `theta`. The ranking score is identical
/// to plain softmax for every `theta`.
pub fn predict_softmax_threshold(v: &[f64], theta: f64) -> OpenSetPrediction {
    let mut pred = predict_softmax(v);
    let best = pred.predicted_label;
    if pred.probs[best] < theta {
        pred.predicted_label = 0;
    }
    pred
}

/// Distance between two equal-length vectors under `kind`.
pub fn distance(kind: DistanceKind, v: &[f64], mu: &[f64]) -> Result<f64> {
    if v.len() != mu.len() {
        return Err(OsrError::DimensionMismatch {
            expected: mu.len(),
            actual: v.len(),
        });
    }
    match kind {
        DistanceKind::Euclidean => Ok(euclidean(v, mu)),
        DistanceKind::Cosine => cosine(v, mu),
        DistanceKind::Eucos { gamma } => Ok(euclidean(v, mu) / gamma + cosine(v, mu)?),
    }
}

fn euclidean(v: &[f64], mu: &[f64]) -> f64 {
    v.iter()
        .zip(mu)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn cosine(v: &[f64], mu: &[f64]) -> Result<f64> {
    let dot: f64 = v.iter().zip(mu).map(|(a, b)| a * b).sum();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nm = mu.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nv == 0.0 || nm == 0.0 {
        return Err(OsrError::ZeroVector);
    }
    Ok(1.0 - dot / (nv * nm))
}

/// Per-class mean activation vectors plus the distances of each correctly
/// classified sample to its own centroid.
#[derive(Debug, Clone)]
pub struct MavStats {
    pub mavs: Vec<Vec<f64>>,
    /// `distances[c]` holds one entry per correct sample of known class `c`.
    pub distances: Vec<Vec<f64>>,
}

/// Compute mean activation vectors over correctly classified samples.
///
/// `samples` pairs each known-class index (0-based over the knowns) with its
/// activation vector; activations are the classifier logits, so a sample is
/// correct when its argmax matches the label. Classes with no correct sample
/// are an error.
pub fn compute_mavs(
    samples: &[(usize, &[f64])],
    known_count: usize,
    kind: DistanceKind,
    class_names: &[String],
) -> Result<MavStats> {
    let mut sums: Vec<Vec<f64>> = vec![Vec::new(); known_count];
    let mut counts = vec![0usize; known_count];
    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); known_count];
    for &(label, v) in samples {
        if v.len() != known_count {
            return Err(OsrError::DimensionMismatch {
                expected: known_count,
                actual: v.len(),
            });
        }
        if argmax(v) != label {
            continue;
        }
        if sums[label].is_empty() {
            sums[label] = vec![0.0; v.len()];
        }
        for (acc, x) in sums[label].iter_mut().zip(v) {
            *acc += x;
        }
        counts[label] += 1;
        members[label].push(v);
    }

    let mut mavs = Vec::with_capacity(known_count);
    for c in 0..known_count {
        if counts[c] == 0 {
            return Err(OsrError::NoCorrectSamples {
                class: class_names
                    .get(c)
                    .cloned()
                    .unwrap_or_else(|| format!("class {c}")),
            });
        }
        let n = counts[c] as f64;
        mavs.push(sums[c].iter().map(|s| s / n).collect::<Vec<f64>>());
    }

    let mut distances = vec![Vec::new(); known_count];
    for c in 0..known_count {
        for v in &members[c] {
            distances[c].push(distance(kind, v, &mavs[c])?);
        }
    }
    Ok(MavStats { mavs, distances })
}

/// Calibrated OpenMax model: per-class centroids and tail models plus the
/// decision hyperparameters. Immutable after calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenMaxModel {
    pub mavs: Vec<Vec<f64>>,
    pub weibulls: Vec<WeibullModel>,
    /// Number of top-ranked classes whose activations are modulated.
    pub alpha: usize,
    /// Rejection threshold on the winning probability (strict comparison).
    pub threshold: f64,
    pub distance: DistanceKind,
}

impl OpenMaxModel {
    pub fn known_count(&self) -> usize {
        self.mavs.len()
    }

    /// Structural invariants: one MAV and one Weibull per class, square
    /// activation dimension, alpha within `[1, K]`, threshold in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let k = self.mavs.len();
        if k == 0 {
            return Err(OsrError::InvalidConfig("model has no classes".into()));
        }
        if self.weibulls.len() != k {
            return Err(OsrError::InvalidConfig(format!(
                "{} weibull models for {} classes",
                self.weibulls.len(),
                k
            )));
        }
        for mav in &self.mavs {
            if mav.len() != k {
                return Err(OsrError::DimensionMismatch {
                    expected: k,
                    actual: mav.len(),
                });
            }
        }
        if self.alpha < 1 || self.alpha > k {
            return Err(OsrError::InvalidConfig(format!(
                "alpha {} outside [1, {}]",
                self.alpha, k
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(OsrError::InvalidConfig(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Calibration hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenMaxParams {
    pub tail_size: usize,
    pub alpha: usize,
    pub threshold: f64,
    pub distance: DistanceKind,
    /// Shrink the tail to a class's correct-sample count instead of failing.
    pub clamp_tail: bool,
}

impl Default for OpenMaxParams {
    fn default() -> Self {
        OpenMaxParams {
            tail_size: 20,
            alpha: 1,
            threshold: 0.0,
            distance: DistanceKind::Euclidean,
            clamp_tail: false,
        }
    }
}

/// Calibrate an OpenMax model on the known-class samples of one split.
///
/// Runs [`compute_mavs`], then fits a Weibull tail per class on that class's
/// correct-sample distances. Deterministic: calibrating twice on the same
/// inputs yields an identical model.
pub fn calibrate_openmax(
    view: &OpenSetView,
    split: Split,
    params: &OpenMaxParams,
) -> Result<OpenMaxModel> {
    let k = view.known_count();
    if params.alpha < 1 || params.alpha > k {
        return Err(OsrError::InvalidConfig(format!(
            "alpha {} outside [1, {k}]",
            params.alpha
        )));
    }
    if !(0.0..=1.0).contains(&params.threshold) {
        return Err(OsrError::InvalidConfig(format!(
            "threshold {} outside [0, 1]",
            params.threshold
        )));
    }
    let rows = view.known_indices(split);
    let base = view.base();
    let samples: Vec<(usize, &[f64])> = rows
        .iter()
        .map(|&(idx, known)| (known, base.samples()[idx].activations.as_slice()))
        .collect();
    let stats = compute_mavs(&samples, k, params.distance, view.known_class_names())?;

    let mut weibulls = Vec::with_capacity(k);
    for c in 0..k {
        let dists = &stats.distances[c];
        let tail = if params.clamp_tail {
            params.tail_size.min(dists.len())
        } else {
            params.tail_size
        };
        let fitted = fit_weibull_tail(dists, tail).map_err(|e| OsrError::Calibration {
            class: view.known_class_names()[c].clone(),
            source: Box::new(e),
        })?;
        weibulls.push(fitted);
    }

    let model = OpenMaxModel {
        mavs: stats.mavs,
        weibulls,
        alpha: params.alpha,
        threshold: params.threshold,
        distance: params.distance,
    };
    model.validate()?;
    Ok(model)
}

/// OpenMax activation recalibration.
///
/// Classes are ranked by activation (descending, ties to the lower index).
/// The top `alpha` ranks are modulated by `1 - ((alpha - r + 1)/alpha) * CDF`
/// of their distance to the class centroid; the removed activation mass is
/// collected in the synthetic unknown slot 0, so the total is conserved.
pub fn recalibrate_activations(model: &OpenMaxModel, v: &[f64]) -> Result<Vec<f64>> {
    let k = model.known_count();
    if v.len() != k {
        return Err(OsrError::DimensionMismatch {
            expected: k,
            actual: v.len(),
        });
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));

    let mut omega = vec![1.0f64; k];
    let alpha = model.alpha as f64;
    for (r, &class) in order.iter().take(model.alpha).enumerate() {
        let rank_weight = (alpha - r as f64) / alpha; // (alpha - rank + 1)/alpha
        let d = distance(model.distance, v, &model.mavs[class])?;
        omega[class] = 1.0 - rank_weight * model.weibulls[class].cdf(d);
    }

    let mut vhat = Vec::with_capacity(k + 1);
    let unknown_mass: f64 = v.iter().zip(&omega).map(|(x, w)| x * (1.0 - w)).sum();
    vhat.push(unknown_mass);
    vhat.extend(v.iter().zip(&omega).map(|(x, w)| x * w));
    Ok(vhat)
}

/// OpenMax decision: softmax over the recalibrated `K+1` activations, with
/// rejection when the unknown slot wins or the winning probability falls
/// strictly below the model threshold.
pub fn predict_openmax(model: &OpenMaxModel, v: &[f64]) -> Result<OpenSetPrediction> {
    let vhat = recalibrate_activations(model, v)?;
    let probs = softmax(&vhat);
    let best = argmax(&probs);
    let predicted_label = if best == 0 || probs[best] < model.threshold {
        0
    } else {
        best
    };
    let score_unknown = probs[0];
    Ok(OpenSetPrediction {
        probs,
        predicted_label,
        score_unknown,
    })
}

/// Ranking score used for AUROC / AUPR-OUT.
///
/// Softmax and softmax-threshold score by one minus the winning known-class
/// probability, independent of any threshold; OpenMax scores by the unknown
/// slot's probability.
pub fn unknownness_score(method: Method, prediction: &OpenSetPrediction) -> f64 {
    match method {
        Method::Softmax | Method::SoftmaxThreshold => {
            let best_known = prediction.probs[1..]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            1.0 - best_known
        }
        Method::OpenMax => prediction.probs[0],
    }
}

/// A ready-to-apply decision rule, as stored in model artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method")]
pub enum MethodSpec {
    #[serde(rename = "softmax")]
    Softmax,
    #[serde(rename = "softmax-threshold")]
    SoftmaxThreshold { theta: f64 },
    #[serde(rename = "openmax")]
    OpenMax(OpenMaxModel),
}

impl MethodSpec {
    pub fn method(&self) -> Method {
        match self {
            MethodSpec::Softmax => Method::Softmax,
            MethodSpec::SoftmaxThreshold { .. } => Method::SoftmaxThreshold,
            MethodSpec::OpenMax(_) => Method::OpenMax,
        }
    }

    /// Apply the decision rule to one logit vector.
    pub fn predict(&self, v: &[f64]) -> Result<OpenSetPrediction> {
        match self {
            MethodSpec::Softmax => Ok(predict_softmax(v)),
            MethodSpec::SoftmaxThreshold { theta } => Ok(predict_softmax_threshold(v, *theta)),
            MethodSpec::OpenMax(model) => predict_openmax(model, v),
        }
    }

    /// Activation dimension the rule expects, when it is pinned by a model.
    pub fn expected_dim(&self) -> Option<usize> {
        match self {
            MethodSpec::OpenMax(model) => Some(model.known_count()),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ArtifactDoc {
    format: u32,
    #[serde(flatten)]
    spec: MethodSpec,
}

/// Serialize a decision rule to its versioned JSON artifact.
pub fn artifact_to_string(spec: &MethodSpec) -> Result<String> {
    let doc = ArtifactDoc {
        format: ARTIFACT_FORMAT,
        spec: spec.clone(),
    };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

/// Parse a versioned JSON artifact back into a decision rule.
pub fn artifact_from_str(text: &str) -> Result<MethodSpec> {
    let doc: ArtifactDoc = serde_json::from_str(text)?;
    if doc.format != ARTIFACT_FORMAT {
        return Err(OsrError::UnsupportedFormat {
            found: doc.format,
            expected: ARTIFACT_FORMAT,
        });
    }
    if let MethodSpec::OpenMax(model) = &doc.spec {
        model.validate()?;
    }
    Ok(doc.spec)
}
