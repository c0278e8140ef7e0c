//! Closed- and open-set evaluation: confusion matrix, accuracy, macro/micro
//! precision/recall/F1, multiclass MCC, AUROC and AUPR-OUT.
//!
//! All operations are pure functions over immutable inputs. Zero-denominator
//! cells (a class never predicted and never true) define to 0 so macro
//! averages stay total and deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};
use crate::openmax::{unknownness_score, Method, OpenSetPrediction};

/// Row-major confusion counts: `counts[true][pred]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub label_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn label_count(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.label_count()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.diagonal() as f64 / total as f64
    }

    /// True count of label `i` (row sum).
    pub fn true_count(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Predicted count of label `j` (column sum).
    pub fn pred_count(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }

    /// CSV rendering with a header row and column of label names.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(",{}\n", self.label_names.join(",")));
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&self.label_names[i]);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Count a confusion matrix over `label_count` labels with generated names.
pub fn confusion_matrix(
    y_true: &[usize],
    y_pred: &[usize],
    label_count: usize,
) -> Result<ConfusionMatrix> {
    let names = (0..label_count).map(|i| i.to_string()).collect();
    confusion_matrix_named(y_true, y_pred, names)
}

/// Count a confusion matrix with explicit label names.
pub fn confusion_matrix_named(
    y_true: &[usize],
    y_pred: &[usize],
    label_names: Vec<String>,
) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(OsrError::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    let l = label_names.len();
    let mut counts = vec![vec![0u64; l]; l];
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if t >= l {
            return Err(OsrError::LabelOutOfRange {
                index: i,
                label: t,
                limit: l,
            });
        }
        if p >= l {
            return Err(OsrError::LabelOutOfRange {
                index: i,
                label: p,
                limit: l,
            });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        label_names,
        counts,
    })
}

/// Precision/recall/F1 triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class scores plus macro (unweighted mean over all labels) and micro
/// (pooled counts) averages.
#[derive(Debug, Clone, PartialEq)]
pub struct PrfScores {
    pub per_class: Vec<Prf>,
    pub macro_avg: Prf,
    pub micro_avg: Prf,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    ratio(2.0 * p * r, p + r)
}

/// Per-class and averaged precision/recall/F1 from a confusion matrix.
/// `0/0` cells define to 0 by convention.
pub fn prf_scores(cm: &ConfusionMatrix) -> PrfScores {
    let l = cm.label_count();
    let mut per_class = Vec::with_capacity(l);
    let mut tp_total = 0.0;
    let mut fp_total = 0.0;
    let mut fn_total = 0.0;
    for c in 0..l {
        let tp = cm.counts[c][c] as f64;
        let fp = cm.pred_count(c) as f64 - tp;
        let fn_ = cm.true_count(c) as f64 - tp;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        per_class.push(Prf {
            precision,
            recall,
            f1: f1_of(precision, recall),
        });
        tp_total += tp;
        fp_total += fp;
        fn_total += fn_;
    }
    let macro_avg = Prf {
        precision: per_class.iter().map(|p| p.precision).sum::<f64>() / l as f64,
        recall: per_class.iter().map(|p| p.recall).sum::<f64>() / l as f64,
        f1: per_class.iter().map(|p| p.f1).sum::<f64>() / l as f64,
    };
    let micro_p = ratio(tp_total, tp_total + fp_total);
    let micro_r = ratio(tp_total, tp_total + fn_total);
    let micro_avg = Prf {
        precision: micro_p,
        recall: micro_r,
        f1: f1_of(micro_p, micro_r),
    };
    PrfScores {
        per_class,
        macro_avg,
        micro_avg,
    }
}

/// Multiclass Matthews correlation coefficient.
///
/// `(c*s - sum_k p_k t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2))` with
/// `c` the diagonal sum, `s` the total, `t_k`/`p_k` the true/predicted
/// counts. Returns 0 when either square-root factor is 0.
pub fn mcc(cm: &ConfusionMatrix) -> f64 {
    let l = cm.label_count();
    let s = cm.total() as f64;
    let c = cm.diagonal() as f64;
    let mut dot_tp = 0.0;
    let mut sum_p2 = 0.0;
    let mut sum_t2 = 0.0;
    for k in 0..l {
        let t_k = cm.true_count(k) as f64;
        let p_k = cm.pred_count(k) as f64;
        dot_tp += t_k * p_k;
        sum_p2 += p_k * p_k;
        sum_t2 += t_k * t_k;
    }
    let num = c * s - dot_tp;
    let den = ((s * s - sum_p2) * (s * s - sum_t2)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// AUROC for unknown detection via the Mann-Whitney rank statistic:
/// the fraction of (unknown, known) pairs where the unknown outranks the
/// known, ties credited one half.
pub fn auroc(scores: &[f64], is_unknown: &[bool]) -> Result<f64> {
    if scores.len() != is_unknown.len() {
        return Err(OsrError::LengthMismatch {
            left: scores.len(),
            right: is_unknown.len(),
        });
    }
    let n_pos = is_unknown.iter().filter(|&&u| u).count();
    let n_neg = is_unknown.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(OsrError::SingleClassScores);
    }

    // Midrank rank-sum: equivalent to pairwise counting with 0.5 tie credit.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block [i, j] shares the average rank
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if is_unknown[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    let u = rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0;
    Ok(u / (n_pos_f * n_neg as f64))
}

/// AUPR with the unknown class as positive: average precision over
/// descending-score cuts, ties grouped into distinct-score blocks.
pub fn aupr_out(scores: &[f64], is_unknown: &[bool]) -> Result<f64> {
    if scores.len() != is_unknown.len() {
        return Err(OsrError::LengthMismatch {
            left: scores.len(),
            right: is_unknown.len(),
        });
    }
    let n_pos = is_unknown.iter().filter(|&&u| u).count();
    if n_pos == 0 {
        return Err(OsrError::NoPositiveSamples);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let n_pos_f = n_pos as f64;
    let mut ap = 0.0f64;
    let mut tp = 0u64;
    let mut seen = 0u64;
    let mut prev_recall = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            seen += 1;
            if is_unknown[idx] {
                tp += 1;
            }
        }
        let recall = tp as f64 / n_pos_f;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// One macro/micro pair as reported per metric family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMicro {
    pub macro_avg: f64,
    pub micro_avg: f64,
}

/// Per-label block of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// The full metric suite over one evaluated sample set.
///
/// `auroc` is absent when the samples contain only one of the two detection
/// classes (e.g. a closed-set view); `aupr_out` is absent without any
/// unknown-labelled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: f64,
    pub precision: MacroMicro,
    pub recall: MacroMicro,
    pub f1: MacroMicro,
    pub mcc: f64,
    pub auroc: Option<f64>,
    pub aupr_out: Option<f64>,
    pub per_class: Vec<PerClassReport>,
    pub confusion: ConfusionMatrix,
}

/// Score a prediction set against open-set view labels (0 = unknown).
///
/// Accuracy, macro/micro precision/recall/F1 and MCC are computed over the
/// full `K_known + 1` label space with the unknown slot as an ordinary
/// label; AUROC and AUPR-OUT rank the method's unknown-ness score against
/// the unknown indicator.
pub fn evaluate_open_set(
    predictions: &[OpenSetPrediction],
    y_true_view: &[usize],
    method: Method,
    label_names: Vec<String>,
) -> Result<EvaluationReport> {
    if predictions.len() != y_true_view.len() {
        return Err(OsrError::LengthMismatch {
            left: predictions.len(),
            right: y_true_view.len(),
        });
    }
    let y_pred: Vec<usize> = predictions.iter().map(|p| p.predicted_label).collect();
    let cm = confusion_matrix_named(y_true_view, &y_pred, label_names)?;
    let prf = prf_scores(&cm);
    let mcc_value = mcc(&cm);

    let scores: Vec<f64> = predictions
        .iter()
        .map(|p| unknownness_score(method, p))
        .collect();
    let flags: Vec<bool> = y_true_view.iter().map(|&t| t == 0).collect();
    let auroc_value = match auroc(&scores, &flags) {
        Ok(v) => Some(v),
        Err(OsrError::SingleClassScores) => None,
        Err(e) => return Err(e),
    };
    let aupr_value = match aupr_out(&scores, &flags) {
        Ok(v) => Some(v),
        Err(OsrError::NoPositiveSamples) => None,
        Err(e) => return Err(e),
    };

    let per_class = prf
        .per_class
        .iter()
        .enumerate()
        .map(|(c, p)| PerClassReport {
            label: cm.label_names[c].clone(),
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            support: cm.true_count(c),
        })
        .collect();

    Ok(EvaluationReport {
        accuracy: cm.accuracy(),
        precision: MacroMicro {
            macro_avg: prf.macro_avg.precision,
            micro_avg: prf.micro_avg.precision,
        },
        recall: MacroMicro {
            macro_avg: prf.macro_avg.recall,
            micro_avg: prf.micro_avg.recall,
        },
        f1: MacroMicro {
            macro_avg: prf.macro_avg.f1,
            micro_avg: prf.micro_avg.f1,
        },
        mcc: mcc_value,
        auroc: auroc_value,
        aupr_out: aupr_value,
        per_class,
        confusion: cm,
    })
}
