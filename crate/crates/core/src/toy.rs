//! Desk-scale substrate for the OSR engine: synthetic Gaussian mixtures,
//! class-balanced loss weights, and a small linear classifier trained by
//! mini-batch gradient descent that produces the logit vectors everything
//! downstream consumes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ActivationDataset, Sample, Split};
use crate::error::{OsrError, Result};
use crate::openmax::softmax;

/// One isotropic Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub mean: Vec<f64>,
    pub stddev: f64,
    pub count: usize,
}

/// A labelled mixture of isotropic Gaussians standing in for an image
/// dataset at desk scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub dim: usize,
    pub classes: Vec<ClassSpec>,
    /// Optional open-set protocol carried through to the dataset manifest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub known_classes: Option<Vec<String>>,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(OsrError::InvalidConfig("mixture has no classes".into()));
        }
        for c in &self.classes {
            if c.mean.len() != self.dim {
                return Err(OsrError::InvalidConfig(format!(
                    "class {:?} mean has dimension {}, expected {}",
                    c.name,
                    c.mean.len(),
                    self.dim
                )));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(OsrError::InvalidConfig(format!(
                    "class {:?} mean is not finite",
                    c.name
                )));
            }
            if !(c.stddev.is_finite() && c.stddev >= 0.0) {
                return Err(OsrError::InvalidConfig(format!(
                    "class {:?} stddev must be a nonnegative real",
                    c.name
                )));
            }
            if c.count == 0 {
                return Err(OsrError::InvalidConfig(format!(
                    "class {:?} has count 0",
                    c.name
                )));
            }
        }
        Ok(())
    }
}

/// Draw the mixture deterministically: per-class counts are exact and the
/// whole dataset is a pure function of `(spec, seed)`.
pub fn generate_mixture(spec: &MixtureSpec, seed: u64) -> Result<ActivationDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for (label, class) in spec.classes.iter().enumerate() {
        for i in 0..class.count {
            let activations: Vec<f64> = class
                .mean
                .iter()
                .map(|m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + class.stddev * z
                })
                .collect();
            samples.push(Sample {
                sample_id: format!("{}-{}", class.name, i),
                label,
                activations,
                split: Split::Unassigned,
            });
        }
    }
    let class_names = spec.classes.iter().map(|c| c.name.clone()).collect();
    ActivationDataset::new(samples, class_names, spec.dim)
}

/// Class-balanced weights from effective sample numbers:
/// `w_c = (1 - beta) / (1 - beta^{n_c})`.
///
/// A singleton class always weights 1; as `n_c` grows the weight decays
/// toward `1 - beta`, softly down-weighting majority classes.
pub fn class_balanced_weights(counts: &[usize], beta: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&beta) {
        return Err(OsrError::InvalidConfig(format!(
            "beta must lie in [0, 1), got {beta}"
        )));
    }
    counts
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(OsrError::InvalidConfig(
                    "class counts must be at least 1".into(),
                ));
            }
            let beta_pow = if n <= i32::MAX as usize {
                beta.powi(n as i32)
            } else {
                beta.powf(n as f64)
            };
            Ok((1.0 - beta) / (1.0 - beta_pow))
        })
        .collect()
}

/// Training configuration with the reference defaults: learning rate 0.001,
/// batch size 16, 20 epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 20,
            batch_size: 16,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// A linear classifier: `logits(x) = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyClassifier {
    /// `K x D` weight matrix.
    pub weights: Vec<Vec<f64>>,
    /// Length-`K` bias vector.
    pub biases: Vec<f64>,
    pub config: TrainConfig,
    /// Mean training loss after the final epoch; absent for zero epochs.
    pub final_loss: Option<f64>,
}

impl ToyClassifier {
    pub fn class_count(&self) -> usize {
        self.weights.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.first().map_or(0, |row| row.len())
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        if features.is_empty() {
            return 0.0;
        }
        let correct = features
            .iter()
            .zip(labels)
            .filter(|(x, &y)| {
                let z = self.logits(x);
                let mut best = 0;
                for k in 1..z.len() {
                    if z[k] > z[best] {
                        best = k;
                    }
                }
                best == y
            })
            .count();
        correct as f64 / features.len() as f64
    }
}

/// Weighted cross-entropy over a batch plus the decoupled weight-decay
/// penalty, with its analytic gradient.
///
/// Returns `(loss, grad_weights, grad_biases)` where the loss is
/// `sum_i w_{y_i} * (-log softmax(W x_i + b)[y_i]) / sum_i w_{y_i}
///  + (weight_decay/2) * ||W||^2`.
///
/// Normalizing by the batch's total weight keeps the learning-rate scale
/// independent of the absolute weight magnitude (class-balanced weights at
/// beta = 0.999 are of order 1e-3) and reduces exactly to the plain batch
/// mean under uniform weights. Biases carry no decay.
pub fn loss_and_gradient(
    weights: &[Vec<f64>],
    biases: &[f64],
    features: &[Vec<f64>],
    labels: &[usize],
    class_weights: &[f64],
    weight_decay: f64,
) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
    let k = weights.len();
    let d = weights.first().map_or(0, |row| row.len());
    let weight_total: f64 = labels.iter().map(|&y| class_weights[y]).sum();
    let mut loss = 0.0;
    let mut grad_w = vec![vec![0.0; d]; k];
    let mut grad_b = vec![0.0; k];

    for (x, &y) in features.iter().zip(labels) {
        let z: Vec<f64> = weights
            .iter()
            .zip(biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        let w_y = class_weights[y];
        loss += w_y * (log_sum - z[y]);

        let probs = softmax(&z);
        for c in 0..k {
            let err = w_y * (probs[c] - if c == y { 1.0 } else { 0.0 }) / weight_total;
            for (g, v) in grad_w[c].iter_mut().zip(x) {
                *g += err * v;
            }
            grad_b[c] += err;
        }
    }
    loss /= weight_total;

    if weight_decay != 0.0 {
        let mut penalty = 0.0;
        for (row, grad_row) in weights.iter().zip(grad_w.iter_mut()) {
            for (w, g) in row.iter().zip(grad_row.iter_mut()) {
                penalty += w * w;
                *g += weight_decay * w;
            }
        }
        loss += 0.5 * weight_decay * penalty;
    }
    (loss, grad_w, grad_b)
}

/// Train the linear classifier by mini-batch gradient descent on the
/// class-weighted cross-entropy.
///
/// Parameters start at zero; mini-batch order is a seeded shuffle per epoch,
/// so runs replay exactly. The per-epoch loss trace holds the full-dataset
/// loss after each epoch; a non-finite loss aborts with the epoch index.
pub fn train_toy_classifier(
    features: &[Vec<f64>],
    labels: &[usize],
    class_weights: &[f64],
    config: &TrainConfig,
) -> Result<(ToyClassifier, Vec<f64>)> {
    let k = class_weights.len();
    if k == 0 {
        return Err(OsrError::InvalidConfig("no classes to train".into()));
    }
    if class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(OsrError::InvalidConfig(
            "class weights must be positive finite reals".into(),
        ));
    }
    if features.len() != labels.len() {
        return Err(OsrError::LengthMismatch {
            left: features.len(),
            right: labels.len(),
        });
    }
    if features.is_empty() {
        return Err(OsrError::InvalidConfig("no training samples".into()));
    }
    let d = features[0].len();
    for (i, x) in features.iter().enumerate() {
        if x.len() != d {
            return Err(OsrError::DimensionMismatch {
                expected: d,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(OsrError::InvalidConfig(format!(
                "non-finite feature in sample {i}"
            )));
        }
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(OsrError::LabelOutOfRange {
                index: i,
                label: y,
                limit: k,
            });
        }
    }
    if config.batch_size == 0 {
        return Err(OsrError::InvalidConfig(
            "batch size must be positive".into(),
        ));
    }

    let mut weights = vec![vec![0.0f64; d]; k];
    let mut biases = vec![0.0f64; k];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.batch_size) {
            let batch_x: Vec<Vec<f64>> = chunk.iter().map(|&i| features[i].clone()).collect();
            let batch_y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (_, grad_w, grad_b) = loss_and_gradient(
                &weights,
                &biases,
                &batch_x,
                &batch_y,
                class_weights,
                config.weight_decay,
            );
            for (row, grad_row) in weights.iter_mut().zip(&grad_w) {
                for (w, g) in row.iter_mut().zip(grad_row) {
                    *w -= config.learning_rate * g;
                }
            }
            for (b, g) in biases.iter_mut().zip(&grad_b) {
                *b -= config.learning_rate * g;
            }
        }
        let (epoch_loss, _, _) = loss_and_gradient(
            &weights,
            &biases,
            features,
            labels,
            class_weights,
            config.weight_decay,
        );
        if !epoch_loss.is_finite() {
            return Err(OsrError::Divergence { epoch });
        }
        trace.push(epoch_loss);
    }

    let final_loss = trace.last().copied();
    Ok((
        ToyClassifier {
            weights,
            biases,
            config: *config,
            final_loss,
        },
        trace,
    ))
}

/// Run every sample of a feature dataset through the classifier, producing
/// a logit dataset with ids, labels and split tags carried through.
pub fn extract_logits(model: &ToyClassifier, ds: &ActivationDataset) -> Result<ActivationDataset> {
    if ds.dim() != model.feature_dim() {
        return Err(OsrError::DimensionMismatch {
            expected: model.feature_dim(),
            actual: ds.dim(),
        });
    }
    let samples: Vec<Sample> = ds
        .samples()
        .iter()
        .map(|s| Sample {
            sample_id: s.sample_id.clone(),
            label: s.label,
            activations: model.logits(&s.activations),
            split: s.split,
        })
        .collect();
    ActivationDataset::new(samples, ds.class_names().to_vec(), model.class_count())
}
