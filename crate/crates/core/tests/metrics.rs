mod common;

use cavenet::metrics::*;
use cavenet::rng::{seeded, RngExt};
use cavenet::tensor::Tensor;
use common::fixtures::{binary_instance, RESULTS_ROWS, RESULTS_TOLERANCE};
use common::oracles::auc_pairs;
use proptest::prelude::*;

#[test]
fn auc_matches_pair_counting_exactly() {
    for seed in 0..50 {
        let (scores, positive) = binary_instance(20 + seed as usize, seed);
        let auc = binary_auc(&scores, &positive).unwrap();
        assert_eq!(auc, auc_pairs(&scores, &positive), "instance {seed}");
    }
}

#[test]
fn auc_degenerate_and_tied_cases() {
    assert_eq!(binary_auc(&[0.1, 0.9], &[true, true]), None);
    assert_eq!(
        binary_auc(&[0.3; 6], &[true, false, true, false, false, true]),
        Some(0.5)
    );
    assert_eq!(
        binary_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]),
        Some(1.0)
    );
}

#[test]
fn binary_hand_counted_rates() {
    let cm = ConfusionMatrix::from_rows(&[vec![8, 2], vec![1, 9]]).unwrap();
    let m = per_class_metrics(&cm);
    assert_eq!(m[0].sensitivity.value, 0.8);
    assert_eq!(m[0].precision.value, 8.0 / 9.0);
    assert_eq!(m[0].specificity.value, 0.9);
    assert_eq!(accuracy(&cm).unwrap(), 17.0 / 20.0);
    assert!((balanced_accuracy(&cm).unwrap() - 0.85).abs() < 1e-15);
}

#[test]
fn unpredicted_class_has_flagged_precision() {
    let cm = confusion(&[0, 1, 2, 2], &[0, 0, 0, 0], 3).unwrap();
    let m = per_class_metrics(&cm);
    assert!(!m[1].precision.defined);
    assert_eq!(m[1].precision.value, 0.0);
    let csv = per_class_csv(&evaluate("x", &one_hot(&[0, 0, 0, 0], 3), &[0, 1, 2, 2]).unwrap());
    let row1: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(
        row1[12],
        "1",
        "precision_undefined column of `{}`",
        csv.lines().nth(2).unwrap()
    );
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| (0..classes).map(|j| f64::from(u8::from(j == y))).collect())
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

#[test]
fn perfect_predictions_score_one_everywhere() {
    let labels = [0, 1, 2, 3, 1, 2, 0, 3];
    let r = evaluate("perfect", &one_hot(&labels, 4), &labels).unwrap();
    for v in [
        r.accuracy,
        r.balanced_accuracy,
        r.macro_avg.sensitivity,
        r.macro_avg.specificity,
        r.macro_avg.precision,
        r.macro_avg.f1,
        r.auc.macro_auc,
        r.combined,
    ] {
        assert_eq!(v, 1.0);
    }
    for t in 0..4 {
        for p in 0..4 {
            assert_eq!(r.confusion.get(t, p), if t == p { 2 } else { 0 });
        }
    }
}

#[test]
fn uniform_guessing_has_chance_balanced_accuracy() {
    let mut rng = seeded(8);
    let n = 40_000;
    let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
    let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
    let b = balanced_accuracy(&confusion(&truth, &pred, 5).unwrap()).unwrap();
    assert!((b - 0.2).abs() < 0.02, "{b}");
}

#[test]
fn combined_metric_reproduces_results_table() {
    for (auc, acc, want) in RESULTS_ROWS {
        let got = combined_metric(auc, acc);
        assert!(
            (got - want).abs() <= RESULTS_TOLERANCE,
            "({auc}, {acc}) -> {got}, table says {want}"
        );
    }
    assert_eq!(combined_metric(1.0, 1.0), 1.0);
}

#[test]
fn heatmap_of_identity_and_empty_rows() {
    let cm = ConfusionMatrix::from_rows(&[vec![3, 0, 0], vec![0, 0, 0], vec![0, 0, 5]]).unwrap();
    let ppm = heatmap_ppm(&cm);
    let side = 3 * HEATMAP_CELL;
    let header = format!("P6\n{side} {side}\n255\n");
    assert!(ppm.starts_with(header.as_bytes()));
    let px = &ppm[header.len()..];
    assert_eq!(px.len(), side * side * 3);
    let at = |x: usize, y: usize| px[(y * side + x) * 3];
    let mid = HEATMAP_CELL / 2;
    assert_eq!(at(mid, mid), 255);
    assert_eq!(at(2 * HEATMAP_CELL + mid, 2 * HEATMAP_CELL + mid), 255);
    assert_eq!(at(HEATMAP_CELL + mid, mid), 0);
    for x in 0..side {
        assert_eq!(at(x, HEATMAP_CELL + mid), 0, "empty row must stay black");
    }

    let dir = tempfile::tempdir().unwrap();
    let (p, c) = (dir.path().join("h.ppm"), dir.path().join("h.csv"));
    export_heatmap(&cm, &p, &c).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), ppm);
    assert_eq!(ConfusionMatrix::read_csv(&c).unwrap(), cm);
}

#[test]
fn report_csv_round_trips() {
    let labels = [0, 1, 1, 2, 2, 2];
    let probs = Tensor::from_rows(&[
        vec![0.6, 0.3, 0.1],
        vec![0.2, 0.5, 0.3],
        vec![0.5, 0.4, 0.1],
        vec![0.1, 0.1, 0.8],
        vec![0.3, 0.3, 0.4],
        vec![0.2, 0.6, 0.2],
    ])
    .unwrap();
    let r = evaluate("m", &probs, &labels).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    write_report_csv(std::slice::from_ref(&r), &path).unwrap();
    let rows = read_report_csv(&path).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].0, "m");
    assert_eq!(
        rows[0].1,
        vec![
            r.accuracy,
            r.macro_avg.specificity,
            r.macro_avg.sensitivity,
            r.macro_avg.f1,
            r.macro_avg.precision,
            r.balanced_accuracy,
            r.auc.macro_auc,
            r.combined
        ]
    );
}

fn labels_and_scores() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
    (4usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec(0u32..20, n),
        )
            .prop_map(|(mut pos, grid)| {
                pos[0] = true;
                pos[1] = false;
                (pos, grid.into_iter().map(|g| g as f64 / 10.0 - 1.0).collect())
            })
    })
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_maps((pos, scores) in labels_and_scores(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = binary_auc(&scores, &pos).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        prop_assert_eq!(binary_auc(&exp, &pos).unwrap(), base);
        prop_assert_eq!(binary_auc(&affine, &pos).unwrap(), base);
        prop_assert_eq!(base, auc_pairs(&scores, &pos));
    }

    #[test]
    fn confusion_identities(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = confusion(&truth, &pred, 4).unwrap();
        prop_assert_eq!(cm.total(), truth.len() as u64);
        let m = per_class_metrics(&cm);
        for (j, mj) in m.iter().enumerate() {
            let support = truth.iter().filter(|&&t| t == j).count() as u64;
            prop_assert_eq!(cm.row(j).iter().sum::<u64>(), support);
            prop_assert_eq!(mj.tp + mj.fn_, support);
            prop_assert_eq!(mj.tp + mj.fn_ + mj.fp + mj.tn, cm.total());
            if mj.sensitivity.defined {
                prop_assert_eq!((mj.sensitivity.value * support as f64).round() as u64, mj.tp);
            }
            for r in [mj.sensitivity, mj.specificity, mj.precision, mj.f1] {
                prop_assert!((0.0..=1.0).contains(&r.value));
            }
        }
        let acc = accuracy(&cm).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
    }
}
