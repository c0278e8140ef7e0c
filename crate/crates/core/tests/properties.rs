//! Property tests for the engine's cross-cutting invariants.

mod common;

use proptest::prelude::*;

use osr_core::dataset::{
    apply_openset_protocol, load_dataset, split_dataset, write_dataset, ActivationDataset, Sample,
    Split,
};
use osr_core::metrics::{auroc, confusion_matrix, mcc, prf_scores, ConfusionMatrix};
use osr_core::openmax::{
    predict_openmax, predict_softmax, predict_softmax_threshold, recalibrate_activations, softmax,
    DistanceKind, OpenMaxModel,
};
use osr_core::weibull::{fit_weibull_tail, sample_weibull, WeibullModel};

// ---- generators ----------------------------------------------------------

fn arb_dataset() -> impl Strategy<Value = ActivationDataset> {
    (2usize..5, 1usize..4).prop_flat_map(|(classes, dim)| {
        let per_class = proptest::collection::vec(1usize..6, classes);
        let values = proptest::collection::vec(-100.0f64..100.0, dim * 64);
        (per_class, values).prop_map(move |(counts, pool)| {
            let mut samples = Vec::new();
            let mut cursor = 0;
            for (label, &count) in counts.iter().enumerate() {
                for i in 0..count {
                    let activations: Vec<f64> = (0..dim)
                        .map(|_| {
                            let v = pool[cursor % pool.len()];
                            cursor += 1;
                            v
                        })
                        .collect();
                    samples.push(Sample {
                        sample_id: format!("c{label}s{i}"),
                        label,
                        activations,
                        split: Split::Unassigned,
                    });
                }
            }
            let class_names = (0..classes).map(|c| format!("class-{c}")).collect();
            ActivationDataset::new(samples, class_names, dim).unwrap()
        })
    })
}

fn arb_logits(k: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-20.0f64..20.0, k)
}

fn arb_weibull() -> impl Strategy<Value = WeibullModel> {
    (0.0f64..2.0, 0.1f64..3.0, 0.3f64..5.0).prop_map(|(tau, lambda, kappa)| WeibullModel {
        tau,
        lambda,
        kappa,
        tail_size: 2,
    })
}

fn arb_model(k: usize) -> impl Strategy<Value = OpenMaxModel> {
    (
        proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, k), k),
        proptest::collection::vec(arb_weibull(), k),
        1usize..=k,
        0.0f64..1.0,
    )
        .prop_map(move |(mavs, weibulls, alpha, threshold)| OpenMaxModel {
            mavs,
            weibulls,
            alpha,
            threshold,
            distance: DistanceKind::Euclidean,
        })
}

// ---- dataset invariants --------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dataset_round_trips_through_files(ds in arb_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        write_dataset(&ds, &path).unwrap();
        let manifest = ds.manifest();
        let back = load_dataset(&path, &manifest).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn split_counts_stay_within_one_of_exact(ds in arb_dataset(), seed in 0u64..1000) {
        let ratios = (0.6, 0.25, 0.15);
        let split = split_dataset(&ds, ratios, seed).unwrap();
        let r = [ratios.0, ratios.1, ratios.2];
        for c in 0..ds.class_count() {
            let n_c = ds.samples().iter().filter(|s| s.label == c).count();
            for (k, sp) in [Split::Train, Split::Val, Split::Test].iter().enumerate() {
                let got = split
                    .samples()
                    .iter()
                    .filter(|s| s.label == c && s.split == *sp)
                    .count();
                prop_assert!(((got as f64) - (n_c as f64) * r[k]).abs() < 1.0);
            }
        }
        // union of splits is the dataset, with only labels' split tags changed
        prop_assert_eq!(split.len(), ds.len());
        prop_assert!(split.samples().iter().all(|s| s.split != Split::Unassigned));
    }

    #[test]
    fn split_same_seed_identical_different_seed_permutes_within_class(
        ds in arb_dataset(),
        seed in 0u64..1000,
    ) {
        let a = split_dataset(&ds, (0.5, 0.3, 0.2), seed).unwrap();
        let b = split_dataset(&ds, (0.5, 0.3, 0.2), seed).unwrap();
        prop_assert_eq!(&a, &b);
        let c = split_dataset(&ds, (0.5, 0.3, 0.2), seed + 1).unwrap();
        // per-class split sizes agree even under a different seed
        for class in 0..ds.class_count() {
            for sp in [Split::Train, Split::Val, Split::Test] {
                let count = |d: &ActivationDataset| {
                    d.samples()
                        .iter()
                        .filter(|s| s.label == class && s.split == sp)
                        .count()
                };
                prop_assert_eq!(count(&a), count(&c));
            }
        }
    }

    #[test]
    fn openset_protocol_changes_only_labels(ds in arb_dataset()) {
        let known = vec![ds.class_names()[1].clone(), ds.class_names()[0].clone()];
        let view = apply_openset_protocol(&ds, &known).unwrap();
        prop_assert_eq!(view.known_count(), 2);
        for (i, s) in ds.samples().iter().enumerate() {
            let v = view.view_label(i);
            prop_assert!(v <= 2);
            match s.label {
                1 => prop_assert_eq!(v, 1),
                0 => prop_assert_eq!(v, 2),
                _ => prop_assert_eq!(v, 0),
            }
        }
    }
}

// ---- softmax / openmax invariants ----------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn prediction_probs_form_a_distribution(k in 2usize..6, seed in any::<u64>()) {
        let v: Vec<f64> = (0..k).map(|i| ((seed >> (i * 8)) & 0xff) as f64 / 8.0 - 16.0).collect();
        for pred in [
            predict_softmax(&v),
            predict_softmax_threshold(&v, 0.7),
        ] {
            prop_assert!((pred.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(pred.probs.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((0.0..=1.0).contains(&pred.score_unknown));
        }
    }

    #[test]
    fn softmax_is_shift_invariant(v in arb_logits(4), shift in -50.0f64..50.0) {
        let a = softmax(&v);
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_zero_agrees_with_plain_softmax(v in arb_logits(5)) {
        let a = predict_softmax(&v);
        let b = predict_softmax_threshold(&v, 0.0);
        prop_assert_eq!(a.predicted_label, b.predicted_label);
        prop_assert_eq!(a.score_unknown, b.score_unknown);
    }

    #[test]
    fn softmax_decision_commutes_with_class_permutation(v in arb_logits(4)) {
        // distinct components so the tie rule cannot interfere
        let mut distinct = v.clone();
        for (i, x) in distinct.iter_mut().enumerate() {
            *x += i as f64 * 1e-6;
        }
        let base = predict_softmax(&distinct);
        let perm = [2usize, 0, 3, 1]; // new position of each class
        let mut permuted = vec![0.0; 4];
        for (from, &to) in perm.iter().enumerate() {
            permuted[to] = distinct[from];
        }
        let moved = predict_softmax(&permuted);
        prop_assert_eq!(moved.predicted_label, perm[base.predicted_label - 1] + 1);
        for (from, &to) in perm.iter().enumerate() {
            prop_assert!((moved.probs[to + 1] - base.probs[from + 1]).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn recalibration_conserves_activation_mass(
        (model, v) in (2usize..6).prop_flat_map(|k| (arb_model(k), arb_logits(k)))
    ) {
        let vhat = recalibrate_activations(&model, &v).unwrap();
        let total_in: f64 = v.iter().sum();
        let total_out: f64 = vhat.iter().sum();
        let scale = v.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        prop_assert!((total_in - total_out).abs() <= 1e-9 * scale);
    }

    #[test]
    fn openmax_probs_form_a_distribution(
        (model, v) in (2usize..6).prop_flat_map(|k| (arb_model(k), arb_logits(k)))
    ) {
        let pred = predict_openmax(&model, &v).unwrap();
        prop_assert!((pred.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(pred.probs.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert_eq!(pred.score_unknown, pred.probs[0]);
    }

    #[test]
    fn raising_top_cdf_moves_probability_to_unknown(
        v_raw in arb_logits(3),
        cdf_lo in 0.0f64..0.5,
        cdf_gap in 0.01f64..0.5,
    ) {
        // top activation nonnegative: modulation moves positive mass to slot 0
        let mut v = v_raw.clone();
        let top = (0..3).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        v[top] = v[top].abs();
        let top = (0..3).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();

        let make = |cdf_top: f64| {
            let mavs = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0], vec![2.0, -2.0, 1.0]];
            let d = osr_core::openmax::distance(DistanceKind::Euclidean, &v, &mavs[top]).unwrap();
            let mut weibulls = vec![
                WeibullModel { tau: 1e18, lambda: 1.0, kappa: 1.0, tail_size: 2 };
                3
            ];
            // hit the requested CDF exactly at the top class's distance
            weibulls[top] = WeibullModel {
                tau: -1.0,
                lambda: (d + 1.0) / (-(1.0 - cdf_top).ln()),
                kappa: 1.0,
                tail_size: 2,
            };
            OpenMaxModel {
                mavs,
                weibulls,
                alpha: 1,
                threshold: 0.0,
                distance: DistanceKind::Euclidean,
            }
        };
        let low = predict_openmax(&make(cdf_lo), &v).unwrap();
        let high = predict_openmax(&make(cdf_lo + cdf_gap), &v).unwrap();
        prop_assert!(high.probs[top + 1] <= low.probs[top + 1] + 1e-12);
        prop_assert!(high.probs[0] + 1e-12 >= low.probs[0]);
    }

    #[test]
    fn degenerate_cdfs_reduce_openmax_to_augmented_softmax(v in arb_logits(4)) {
        let model = OpenMaxModel {
            mavs: vec![vec![0.0; 4]; 4],
            weibulls: vec![
                WeibullModel { tau: 1e18, lambda: 1.0, kappa: 1.0, tail_size: 2 };
                4
            ],
            alpha: 2,
            threshold: 0.0,
            distance: DistanceKind::Euclidean,
        };
        let pred = predict_openmax(&model, &v).unwrap();
        let mut augmented = vec![0.0];
        augmented.extend_from_slice(&v);
        let reference = softmax(&augmented);
        let ref_argmax = (0..reference.len())
            .max_by(|&a, &b| reference[a].total_cmp(&reference[b]).then(b.cmp(&a)))
            .unwrap();
        prop_assert_eq!(pred.predicted_label, ref_argmax);
        for (p, r) in pred.probs.iter().zip(&reference) {
            prop_assert!((p - r).abs() < 1e-12);
        }
    }
}

// ---- weibull invariants ----------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cdf_is_monotone_on_random_grids(model in arb_weibull(), start in -1.0f64..5.0) {
        let mut prev = 0.0;
        for i in 0..200 {
            let d = start + i as f64 * 0.05;
            let c = model.cdf(d);
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn fit_is_scale_equivariant(seed in 0u64..500, c in 0.5f64..10.0) {
        let truth = WeibullModel { tau: 0.0, lambda: 2.0, kappa: 1.5, tail_size: 2 };
        let draws = sample_weibull(&truth, 300, seed);
        let scaled: Vec<f64> = draws.iter().map(|d| d * c).collect();
        let a = fit_weibull_tail(&draws, 80).unwrap();
        let b = fit_weibull_tail(&scaled, 80).unwrap();
        prop_assert!((b.tau - c * a.tau).abs() <= 1e-6 * (c * a.tau).abs().max(1e-12));
        prop_assert!((b.lambda - c * a.lambda).abs() <= 1e-6 * (c * a.lambda).abs());
        prop_assert!((b.kappa - a.kappa).abs() <= 1e-6 * a.kappa.abs());
    }
}

#[test]
fn fit_sample_round_trip_recovers_parameters() {
    for (lambda, kappa, seed) in [(1.0, 0.8, 1u64), (2.5, 1.7, 2), (0.7, 3.2, 3)] {
        let truth = WeibullModel {
            tau: 0.0,
            lambda,
            kappa,
            tail_size: 2,
        };
        let draws = sample_weibull(&truth, 10_000, seed);
        let fitted = fit_weibull_tail(&draws, 10_000).unwrap();
        assert!(
            (fitted.lambda - lambda).abs() / lambda < 0.05,
            "lambda {lambda}: fitted {}",
            fitted.lambda
        );
        assert!(
            (fitted.kappa - kappa).abs() / kappa < 0.05,
            "kappa {kappa}: fitted {}",
            fitted.kappa
        );
    }
}

// ---- metric invariants -----------------------------------------------------

fn snap(x: f64) -> f64 {
    // snap scores onto a coarse grid so ties actually occur
    (x * 8.0).round() / 8.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auroc_is_invariant_under_monotone_transforms(
        raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 4..40),
        a in 0.1f64..5.0,
        b in -3.0f64..3.0,
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| snap(*s)).collect();
        let flags: Vec<bool> = raw.iter().map(|(_, u)| *u).collect();
        prop_assume!(flags.iter().any(|&u| u) && flags.iter().any(|&u| !u));
        let base = auroc(&scores, &flags).unwrap();
        // strictly increasing map: exp preserves order globally
        let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        let transformed = auroc(&mapped, &flags).unwrap();
        prop_assert!((base - transformed).abs() < 1e-12);
    }

    #[test]
    fn auroc_complement_identity_without_ties(
        seeds in proptest::collection::vec(any::<u32>(), 4..40),
    ) {
        // distinct scores by construction
        let mut scores: Vec<f64> = seeds
            .iter()
            .enumerate()
            .map(|(i, &s)| s as f64 + i as f64 * 1e-3)
            .collect();
        scores.sort_by(|x, y| x.partial_cmp(y).unwrap());
        scores.dedup();
        prop_assume!(scores.len() >= 4);
        let flags: Vec<bool> = scores.iter().enumerate().map(|(i, _)| i % 3 == 0).collect();
        prop_assume!(flags.iter().any(|&u| u) && flags.iter().any(|&u| !u));
        let forward = auroc(&scores, &flags).unwrap();
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let backward = auroc(&negated, &flags).unwrap();
        prop_assert!((forward + backward - 1.0).abs() < 1e-12);
    }

    #[test]
    fn micro_precision_equals_accuracy(
        pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..40),
    ) {
        let y_true: Vec<usize> = pairs.iter().map(|(t, _)| *t).collect();
        let y_pred: Vec<usize> = pairs.iter().map(|(_, p)| *p).collect();
        let cm = confusion_matrix(&y_true, &y_pred, 4).unwrap();
        let scores = prf_scores(&cm);
        prop_assert!((scores.micro_avg.precision - cm.accuracy()).abs() < 1e-12);
        prop_assert!((scores.micro_avg.recall - cm.accuracy()).abs() < 1e-12);
        prop_assert!((scores.micro_avg.f1 - cm.accuracy()).abs() < 1e-12);
    }

    #[test]
    fn mcc_is_invariant_under_simultaneous_permutation(
        pairs in proptest::collection::vec((0usize..3, 0usize..3), 2..40),
    ) {
        let y_true: Vec<usize> = pairs.iter().map(|(t, _)| *t).collect();
        let y_pred: Vec<usize> = pairs.iter().map(|(_, p)| *p).collect();
        let base = mcc(&confusion_matrix(&y_true, &y_pred, 3).unwrap());
        let perm = [2usize, 0, 1];
        let pt: Vec<usize> = y_true.iter().map(|&t| perm[t]).collect();
        let pp: Vec<usize> = y_pred.iter().map(|&p| perm[p]).collect();
        let permuted = mcc(&confusion_matrix(&pt, &pp, 3).unwrap());
        prop_assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn metrics_match_brute_force_references(
        pairs in proptest::collection::vec((0usize..4, 0usize..4, 0.0f64..1.0), 2..30),
    ) {
        let y_true: Vec<usize> = pairs.iter().map(|(t, _, _)| *t).collect();
        let y_pred: Vec<usize> = pairs.iter().map(|(_, p, _)| *p).collect();
        let scores: Vec<f64> = pairs.iter().map(|(_, _, s)| snap(*s)).collect();
        let labels = 4;

        let cm = confusion_matrix(&y_true, &y_pred, labels).unwrap();
        prop_assert_eq!(&cm.counts, &common::brute_confusion(&y_true, &y_pred, labels));

        let engine = prf_scores(&cm);
        let (per_class, macro_avg, micro) = common::brute_prf(&y_true, &y_pred, labels);
        for (got, want) in engine.per_class.iter().zip(&per_class) {
            prop_assert!((got.precision - want.0).abs() < 1e-12);
            prop_assert!((got.recall - want.1).abs() < 1e-12);
            prop_assert!((got.f1 - want.2).abs() < 1e-12);
        }
        prop_assert!((engine.macro_avg.precision - macro_avg.0).abs() < 1e-12);
        prop_assert!((engine.macro_avg.recall - macro_avg.1).abs() < 1e-12);
        prop_assert!((engine.macro_avg.f1 - macro_avg.2).abs() < 1e-12);
        prop_assert!((engine.micro_avg.precision - micro.0).abs() < 1e-12);

        prop_assert!((mcc(&cm) - common::brute_mcc(&y_true, &y_pred, labels)).abs() < 1e-12);

        let flags: Vec<bool> = y_true.iter().map(|&t| t == 0).collect();
        if flags.iter().any(|&u| u) && flags.iter().any(|&u| !u) {
            let got = auroc(&scores, &flags).unwrap();
            prop_assert!((got - common::brute_auroc(&scores, &flags)).abs() < 1e-12);
        }
        if flags.iter().any(|&u| u) {
            let got = osr_core::metrics::aupr_out(&scores, &flags).unwrap();
            prop_assert!((got - common::brute_aupr(&scores, &flags)).abs() < 1e-12);
        }
    }
}

// Referenced by the spec'd properties but cheap to pin exactly: a confusion
// matrix's CSV round-trips its counts.
#[test]
fn confusion_csv_carries_all_counts() {
    let cm = ConfusionMatrix {
        label_names: vec!["unknown".into(), "a".into(), "b".into()],
        counts: vec![vec![5, 1, 0], vec![2, 7, 1], vec![0, 0, 4]],
    };
    let csv = cm.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    for (i, line) in lines.iter().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], cm.label_names[i - 1]);
        let row_sum: u64 = cells[1..].iter().map(|c| c.parse::<u64>().unwrap()).sum();
        assert_eq!(row_sum, cm.true_count(i - 1));
    }
}
