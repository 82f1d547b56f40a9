use super::*;
use crate::hsio::{ClassLegend, GroundTruthMap};
use proptest::prelude::*;

fn m(rows: &[&[u64]]) -> ConfusionMatrix {
    ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn confusion_counts() {
    let id = confusion(&[1, 2, 3], &[1, 2, 3], 3).unwrap();
    assert_eq!(id.rows(), vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
    let c = confusion(&[1, 1], &[1, 2], 2).unwrap();
    assert_eq!((c.get(0, 0), c.get(1, 0), c.total()), (1, 1, 2));
    assert!(matches!(confusion(&[3], &[1], 2), Err(Error::InvalidLabel { .. })));
    assert!(confusion(&[1], &[1, 1], 2).is_err());
}

#[test]
fn two_by_two_hand_case() {
    let c = m(&[&[2, 1], &[1, 2]]);
    assert_eq!(overall_accuracy(&c), 4.0 / 6.0);
    assert_eq!(average_accuracy(&c), 2.0 / 3.0);
    assert!((kappa(&c) - 1.0 / 3.0).abs() < 1e-15);
    let r = report_from_matrix(&c, Timings::default());
    assert_eq!((percent(r.oa), percent(r.aa), percent(r.kappa)), ("66.67".into(), "66.67".into(), "33.33".into()));
}

#[test]
fn degenerate_and_chance_cases() {
    assert_eq!(kappa(&m(&[&[5, 0], &[5, 0]])), 0.0);
    assert_eq!(kappa(&m(&[&[4, 0], &[0, 0]])), 0.0);
    assert_eq!(overall_accuracy(&m(&[&[0, 3], &[2, 0]])), 0.0);
    let id = m(&[&[3, 0, 0], &[0, 1, 0], &[0, 0, 2]]);
    assert_eq!((overall_accuracy(&id), average_accuracy(&id), kappa(&id)), (1.0, 1.0, 1.0));
}

#[test]
fn absent_classes_are_skipped_in_aa() {
    let c = m(&[&[1, 1, 0], &[0, 0, 0], &[0, 0, 2]]);
    assert_eq!(average_accuracy(&c), 0.75);
    assert_eq!(c.recalls()[1], None);
}

#[test]
fn half_even_formatting() {
    assert_eq!(fixed2(0.125), "0.12");
    assert_eq!(fixed2(0.375), "0.38");
    assert_eq!(fixed2(92.8249), "92.82");
    assert_eq!(fixed2(2.5), "2.50");
    assert_eq!(fixed2(-0.001), "0.00");
    assert_eq!(fixed2(-1.236), "-1.24");
    assert_eq!(round_half_even_2(1.005), 1.0);
    assert_eq!(percent(1.0), "100.00");
}

#[test]
fn text_report_lists_rows_in_order() {
    let r = evaluate(&[1, 2, 2], &[1, 2, 1], 2, Timings { train_seconds: 1.5, test_seconds: 0.25 }).unwrap();
    let full = r.to_text();
    let text = full.split_once('\n').unwrap().1;
    let order: Vec<usize> = ["kappa", "OA", "AA", "Tr", "Te"].iter().map(|k| text.find(k).unwrap()).collect();
    assert!(order.windows(2).all(|w| w[0] < w[1]));
    assert!(text.contains("1.50"));
}

#[test]
fn report_json_has_expected_keys() {
    let r = evaluate(&[1, 2], &[1, 2], 2, Timings::default()).unwrap();
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    for k in ["oa", "aa", "kappa", "per_class", "confusion", "tr_seconds", "te_seconds"] {
        assert!(v.get(k).is_some(), "{k}");
    }
}

#[test]
fn rendering() {
    let gt = GroundTruthMap::new(2, 3, vec![1, 0, 2, 0, 0, 1]).unwrap();
    let legend = ClassLegend::generated(2);
    let coords = [(0, 0), (0, 2), (1, 2)];
    let pred = render_map(&[1, 2, 1], &coords, &legend, &gt).unwrap();
    assert_eq!(pred, render_ground_truth(&gt, &legend).unwrap());
    assert_eq!(*pred.get_pixel(1, 0), image::Rgb([0, 0, 0]));
    let single = GroundTruthMap::new(2, 2, vec![0, 0, 0, 1]).unwrap();
    let map = ClassMap::from_predictions(&[1], &[(1, 1)], &single).unwrap();
    assert_eq!(map.colored_count(), 1);
    assert!(render_map(&[1, 2], &[(0, 0)], &legend, &gt).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.png");
    save_png(&pred, &path, 3).unwrap();
    let back = image::open(&path).unwrap();
    assert_eq!((back.width(), back.height()), (9, 6));
}

fn matrix_strategy() -> impl Strategy<Value = ConfusionMatrix> {
    (1usize..6).prop_flat_map(|c| {
        proptest::collection::vec(0u64..20, c * c).prop_map(move |counts| ConfusionMatrix { classes: c, counts })
    })
}

proptest! {
    #[test]
    fn kappa_is_bounded(mat in matrix_strategy()) {
        let k = kappa(&mat);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k));
    }

    #[test]
    fn metrics_invariant_under_relabeling(mat in matrix_strategy(), shift in 0usize..5) {
        let c = mat.classes;
        let perm = |i: usize| (i + shift) % c;
        let mut p = ConfusionMatrix::zeros(c);
        for i in 0..c {
            for j in 0..c {
                p.counts[perm(i) * c + perm(j)] = mat.get(i, j);
            }
        }
        prop_assert_eq!(overall_accuracy(&p), overall_accuracy(&mat));
        prop_assert!((average_accuracy(&p) - average_accuracy(&mat)).abs() < 1e-12);
        prop_assert!((kappa(&p) - kappa(&mat)).abs() < 1e-12);
    }

    #[test]
    fn label_lists_and_matrix_agree(pairs in proptest::collection::vec((1usize..5, 1usize..5), 1..200)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = confusion(&pred, &truth, 4).unwrap();
        let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        prop_assert_eq!(overall_accuracy(&m), correct as f64 / pred.len() as f64);
        let recalls = m.recalls().into_iter().flatten().collect::<Vec<_>>();
        let lo = recalls.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = recalls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let oa = overall_accuracy(&m);
        prop_assert!(oa >= lo - 1e-12 && oa <= hi + 1e-12);
    }

    #[test]
    fn uniform_truth_gives_equal_oa_and_aa(per in 1u64..10, preds in proptest::collection::vec(0usize..3, 30)) {
        // 3 classes, `per` true samples each
        let mut m = ConfusionMatrix::zeros(3);
        for t in 0..3 {
            for k in 0..per as usize {
                m.counts[t * 3 + preds[(t * 10 + k) % 30]] += 1;
            }
        }
        prop_assert!((overall_accuracy(&m) - average_accuracy(&m)).abs() < 1e-12);
    }
}
