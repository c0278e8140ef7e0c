//! Brute-force reference implementations used as independent oracles.
//! These deliberately take the slow, literal route so they share no code
//! path with the engine.

/// O(n * L^2) confusion counting by scanning the whole input per cell.
pub fn brute_confusion(y_true: &[usize], y_pred: &[usize], labels: usize) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; labels]; labels];
    for (i, row) in counts.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = y_true
                .iter()
                .zip(y_pred)
                .filter(|(&t, &p)| t == i && p == j)
                .count() as u64;
        }
    }
    counts
}

/// Per-class, macro and micro precision/recall/F1 recomputed directly from
/// the label arrays (never via a confusion matrix).
#[allow(clippy::type_complexity)]
pub fn brute_prf(
    y_true: &[usize],
    y_pred: &[usize],
    labels: usize,
) -> (Vec<(f64, f64, f64)>, (f64, f64, f64), (f64, f64, f64)) {
    let safe = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    let mut per_class = Vec::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
    for c in 0..labels {
        let tp = y_true
            .iter()
            .zip(y_pred)
            .filter(|(&t, &p)| t == c && p == c)
            .count() as f64;
        let fp = y_true
            .iter()
            .zip(y_pred)
            .filter(|(&t, &p)| t != c && p == c)
            .count() as f64;
        let fn_ = y_true
            .iter()
            .zip(y_pred)
            .filter(|(&t, &p)| t == c && p != c)
            .count() as f64;
        let prec = safe(tp, tp + fp);
        let rec = safe(tp, tp + fn_);
        let f1 = safe(2.0 * prec * rec, prec + rec);
        per_class.push((prec, rec, f1));
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
    }
    let n = labels as f64;
    let macro_avg = (
        per_class.iter().map(|x| x.0).sum::<f64>() / n,
        per_class.iter().map(|x| x.1).sum::<f64>() / n,
        per_class.iter().map(|x| x.2).sum::<f64>() / n,
    );
    let micro_p = safe(tp_all, tp_all + fp_all);
    let micro_r = safe(tp_all, tp_all + fn_all);
    let micro = (
        micro_p,
        micro_r,
        safe(2.0 * micro_p * micro_r, micro_p + micro_r),
    );
    (per_class, macro_avg, micro)
}

/// Multiclass MCC through the indicator-covariance route: Pearson
/// correlation between the one-hot true and predicted matrices.
pub fn brute_mcc(y_true: &[usize], y_pred: &[usize], labels: usize) -> f64 {
    let n = y_true.len() as f64;
    let mut cov_xy = 0.0;
    let mut cov_xx = 0.0;
    let mut cov_yy = 0.0;
    for c in 0..labels {
        let t_mean = y_true.iter().filter(|&&t| t == c).count() as f64 / n;
        let p_mean = y_pred.iter().filter(|&&p| p == c).count() as f64 / n;
        for (&t, &p) in y_true.iter().zip(y_pred) {
            let x = if t == c { 1.0 } else { 0.0 } - t_mean;
            let y = if p == c { 1.0 } else { 0.0 } - p_mean;
            cov_xy += x * y;
            cov_xx += x * x;
            cov_yy += y * y;
        }
    }
    let den = (cov_xx * cov_yy).sqrt();
    if den == 0.0 {
        0.0
    } else {
        cov_xy / den
    }
}

/// AUROC by explicit enumeration of every (unknown, known) pair,
/// half credit on ties.
pub fn brute_auroc(scores: &[f64], is_unknown: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (sp, &up) in scores.iter().zip(is_unknown) {
        if !up {
            continue;
        }
        for (sn, &un) in scores.iter().zip(is_unknown) {
            if un {
                continue;
            }
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Average precision by evaluating precision and recall from scratch at
/// every distinct score threshold, descending.
pub fn brute_aupr(scores: &[f64], is_unknown: &[bool]) -> f64 {
    let n_pos = is_unknown.iter().filter(|&&u| u).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for theta in thresholds {
        let tp = scores
            .iter()
            .zip(is_unknown)
            .filter(|(&s, &u)| s >= theta && u)
            .count() as f64;
        let predicted_pos = scores.iter().filter(|&&s| s >= theta).count() as f64;
        let precision = tp / predicted_pos;
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}
