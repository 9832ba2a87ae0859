use proptest::prelude::*;
use veralign::align::{
    inject_ground_truth, predict_labels, propagate, thresholded_pl, ConfidenceMatrix, RowKind, ThresholdRule,
};
use veralign::graph::{normalize, NormalizeOptions, SymmetricMatrix};
use veralign::ingest::{Article, DanglingPolicy, Dataset, GoldLabels, SplitSpec};
use veralign::{Matrix, PredictionMatrix};

/// Symmetric nonnegative matrix with some all-zero (isolated) rows.
fn weights(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_n).prop_flat_map(|n| {
        proptest::collection::vec(prop_oneof![3 => Just(0.0), 1 => 0.1..5.0f64], n * n).prop_map(move |v| {
            let mut a = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i..n {
                    a[i][j] = v[i * n + j];
                    a[j][i] = v[i * n + j];
                }
            }
            a
        })
    })
}

fn rows(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(0.0..1.0f64, 2), n)
}

proptest! {
    #[test]
    fn propagation_is_linear(
        (a, h1, h2) in weights(15).prop_flat_map(|a| { let n = a.len(); (Just(a), rows(n), rows(n)) }),
        x in -3.0..3.0f64,
        y in -3.0..3.0f64,
        k in 0..5usize,
    ) {
        let g = normalize(&SymmetricMatrix::from_dense(&a).unwrap(), NormalizeOptions::default()).unwrap();
        let combo: Vec<Vec<f64>> = h1.iter().zip(&h2).map(|(r, s)| r.iter().zip(s).map(|(u, v)| x * u + y * v).collect()).collect();
        let m = |r: &Vec<Vec<f64>>| Matrix::from_rows(r).unwrap();
        let lhs = propagate(&g, &m(&combo), k, false).unwrap().scores;
        let p1 = propagate(&g, &m(&h1), k, false).unwrap().scores;
        let p2 = propagate(&g, &m(&h2), k, false).unwrap().scores;
        for i in 0..lhs.as_slice().len() {
            let rhs = x * p1.as_slice()[i] + y * p2.as_slice()[i];
            prop_assert!((lhs.as_slice()[i] - rhs).abs() <= 1e-9);
        }
    }

    #[test]
    fn isolated_rows_are_preserved(
        (a, h) in weights(15).prop_flat_map(|a| { let n = a.len(); (Just(a), rows(n)) }),
        k in 0..5usize,
    ) {
        let g = normalize(&SymmetricMatrix::from_dense(&a).unwrap(), NormalizeOptions::default()).unwrap();
        let out = propagate(&g, &Matrix::from_rows(&h).unwrap(), k, true).unwrap();
        prop_assert_eq!(out.snapshots.len(), k + 1);
        prop_assert_eq!(&out.snapshots[0].to_rows(), &h);
        for (i, row) in a.iter().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                prop_assert_eq!(out.scores.row(i), h[i].as_slice());
            }
        }
        prop_assert!(out.scores.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn identity_graph_keeps_h(h in (1..30usize).prop_flat_map(rows), c in 0.5..9.0f64) {
        let n = h.len();
        let diag: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { c } else { 0.0 }).collect()).collect();
        let g = normalize(&SymmetricMatrix::from_dense(&diag).unwrap(), NormalizeOptions::default()).unwrap();
        let out = propagate(&g, &Matrix::from_rows(&h).unwrap(), 2, false).unwrap();
        prop_assert_eq!(out.scores.to_rows(), h);
    }
}

#[test]
fn two_node_swap() {
    let g = normalize(
        &SymmetricMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
        NormalizeOptions::default(),
    )
    .unwrap();
    let h = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let out = propagate(&g, &h, 1, false).unwrap();
    assert_eq!(out.scores.to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    let bad = Matrix::zeros(3, 2);
    assert!(propagate(&g, &bad, 1, false).is_err());
}

#[test]
fn hardening_edge_cases() {
    let distinct = Matrix::from_rows(&[vec![0.8, 0.2], vec![0.3, 0.7], vec![0.1, 0.9]]).unwrap();
    let h = thresholded_pl(&distinct, 100.0, ThresholdRule::AtOrAbove).unwrap();
    assert_eq!(h.hardened, vec![false, false, true]);

    let flat = Matrix::from_rows(&vec![vec![0.5, 0.5]; 4]).unwrap();
    let h = thresholded_pl(&flat, 95.0, ThresholdRule::AtOrAbove).unwrap();
    assert_eq!(h.threshold, 0.5);
    assert!(h.hardened.iter().all(|&x| x));
    assert!(h.rows.iter_rows().all(|r| r == [1.0, 0.0]));

    // strict rule leaves the ties alone
    let h = thresholded_pl(&flat, 95.0, ThresholdRule::Above).unwrap();
    assert!(h.hardened.iter().all(|&x| !x));

    assert!(thresholded_pl(&flat, 0.0, ThresholdRule::AtOrAbove).is_err());
    assert!(thresholded_pl(&flat, 100.5, ThresholdRule::AtOrAbove).is_err());
    assert!(thresholded_pl(&Matrix::zeros(0, 2), 50.0, ThresholdRule::AtOrAbove).is_err());
}

fn dataset(n: usize) -> Dataset {
    let articles = (0..n)
        .map(|i| Article {
            id: format!("a{i:02}"),
            text: "x".into(),
        })
        .collect();
    let labels: GoldLabels = (0..n).map(|i| (format!("a{i:02}"), i % 2)).collect();
    Dataset::build(articles, labels, vec![], DanglingPolicy::Strict).unwrap()
}

#[test]
fn injection_replaces_exactly_the_split_rows() {
    let ds = dataset(20);
    let rows: Vec<Vec<f64>> = (0..20)
        .map(|i| vec![0.9 - 0.04 * i as f64, 0.1 + 0.04 * i as f64])
        .collect();
    let p = PredictionMatrix::new(Matrix::from_rows(&rows).unwrap()).unwrap();

    let same = inject_ground_truth(&p, &ds, &SplitSpec::empty()).unwrap();
    assert_eq!(same, ConfidenceMatrix::from_predictions(&p));

    let ids: Vec<String> = (0..16).map(|i| format!("a{i:02}")).collect();
    let split = SplitSpec::new(ids, (0..16).map(|i| i % 2).collect()).unwrap();
    let h = inject_ground_truth(&p, &ds, &split).unwrap();
    assert_eq!(h.count(RowKind::GroundTruth), 16);
    assert_eq!(h.scores().row(1), &[0.0, 1.0]);
    assert_eq!(h.scores().row(0), &[1.0, 0.0]);
    assert_eq!(h.scores().row(17), p.row(17));

    let h = h.harden_unlabeled(50.0, ThresholdRule::AtOrAbove).unwrap();
    assert_eq!(h.count(RowKind::GroundTruth), 16);
    assert!(h.count(RowKind::PseudoLabel) >= 1);
    for (i, kind) in h.kinds().iter().enumerate() {
        let row = h.scores().row(i);
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        if *kind == RowKind::Soft {
            assert_eq!(row, p.row(i));
        }
    }

    let labels = predict_labels(h.scores(), &h).unwrap();
    assert_eq!(
        labels.labels.iter().map(|l| l.0).collect::<Vec<_>>(),
        vec![16, 17, 18, 19]
    );

    let unknown = SplitSpec::new(vec!["nope".into()], vec![0]).unwrap();
    assert!(inject_ground_truth(&p, &ds, &unknown).is_err());
}

#[test]
fn case_study_scores_pick_fake() {
    let ds = dataset(2);
    let p = PredictionMatrix::uniform(2, 2);
    let h = ConfidenceMatrix::from_predictions(&p);
    let scores = Matrix::from_rows(&[vec![0.148, 0.199], vec![0.3, 0.3]]).unwrap();
    let labels = predict_labels(&scores, &h).unwrap();
    assert_eq!(labels.by_id(&ds).collect::<Vec<_>>(), vec![("a00", 1), ("a01", 0)]);
}
