//! Library numerics against brute-force references.

mod common;

use common::*;
use ildnet::evalkit::{multilabel_metrics, per_class_f1, pr_curve, roc_auc, PredictionRecord};
use ildnet::fvpool::{mvregress_fit, pca_fit, pca_project};
use ildnet::Error;
use proptest::prelude::*;

fn records(rng: &mut Lcg, n: usize, c: usize, quantise: bool) -> Vec<PredictionRecord> {
    (0..n)
        .map(|i| {
            let scores: Vec<f64> = (0..c)
                .map(|_| {
                    let v = rng.next();
                    if quantise {
                        (v * 4.0).round() / 4.0
                    } else {
                        v
                    }
                })
                .collect();
            let truth = (0..c).map(|_| rng.next() > 0.2).collect();
            PredictionRecord::new(format!("s{i}"), format!("p{}", i / 3), scores, truth).unwrap()
        })
        .collect()
}

#[test]
fn set_metrics_match_set_loop() {
    let mut rng = Lcg(1);
    for trial in 0..50 {
        let recs = records(&mut rng, 1 + trial % 17, 4, trial % 2 == 0);
        let thresholds = [0.0, 0.25, -0.5, 0.1];
        let m = multilabel_metrics(&recs, &thresholds).unwrap();
        let (a, p, r, f) = set_metrics_oracle(&recs, &thresholds);
        for (x, y) in [(m.accuracy, a), (m.precision, p), (m.recall, r), (m.f1, f)] {
            assert!((x - y).abs() < 1e-12, "trial {trial}: {x} vs {y}");
        }
    }
}

#[test]
fn per_class_matches_confusion_table() {
    let mut rng = Lcg(2);
    for trial in 0..50 {
        let recs = records(&mut rng, 2 + trial, 3, trial % 3 == 0);
        for class in 0..3 {
            let m = per_class_f1(&recs, class, 0.0).unwrap();
            let (p, r, f) = confusion_oracle(&recs, class, 0.0);
            assert_eq!((m.precision, m.recall, m.f1), (p, r, f));
        }
    }
}

#[test]
fn auc_and_ap_match_brute_force() {
    let mut rng = Lcg(3);
    let mut checked = 0;
    for trial in 0..60 {
        let n = 2 + trial % 25;
        let scores: Vec<f64> = (0..n)
            .map(|_| if trial % 2 == 0 { (rng.next() * 3.0).round() } else { rng.next() })
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.next() > 0.0).collect();
        let pos = labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == n {
            assert!(matches!(roc_auc(&scores, &labels), Err(Error::UndefinedAuc(_))));
            continue;
        }
        let (_, auc) = roc_auc(&scores, &labels).unwrap();
        assert!((auc - pairwise_auc(&scores, &labels)).abs() < 1e-9);
        let (_, ap) = pr_curve(&scores, &labels).unwrap();
        assert!((ap - exhaustive_ap(&scores, &labels)).abs() < 1e-9);
        checked += 1;
    }
    assert!(checked >= 20);
}

/// Compare each fitted direction with the oracle's eigenvector up to sign,
/// and the projections likewise.
fn check_pca(data: &[f64], d: usize, p: usize) {
    let model = pca_fit(data, d, p).unwrap();
    let (values, vectors) = jacobi_eigen(&covariance(data, d), d);
    let projected = pca_project(&model, data).unwrap();
    let n = data.len() / d;
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64).collect();
    for k in 0..p {
        assert!((model.variances[k] - values[k]).abs() < 1e-9 * values[0].max(1.0));
        let col: Vec<f64> = (0..d).map(|j| model.basis[j * p + k]).collect();
        let dot: f64 = col.iter().zip(&vectors[k]).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-8, "direction {k}: |dot| = {}", dot.abs());
        let sign = dot.signum();
        for i in 0..n {
            let oracle: f64 = (0..d).map(|j| (data[i * d + j] - mean[j]) * vectors[k][j]).sum::<f64>() * sign;
            assert!((projected[i * p + k] - oracle).abs() < 1e-8);
        }
    }
}

#[test]
fn pca_matches_jacobi_oracle() {
    let mut rng = Lcg(4);
    for trial in 0..24 {
        // Alternate tall (covariance route) and wide (Gram route) inputs,
        // with distinct per-axis scales so eigenvalues are well separated.
        let (n, d) = if trial % 2 == 0 { (30, 5) } else { (6, 9) };
        let data: Vec<f64> = (0..n * d).map(|i| rng.next() * (1.0 + (i % d) as f64)).collect();
        let p = if trial % 2 == 0 { 3 } else { 4 };
        check_pca(&data, d, p);
    }
}

#[test]
fn ridge_matches_gaussian_elimination() {
    let mut rng = Lcg(5);
    for trial in 0..25 {
        let (n, p, c) = (12 + trial, 1 + trial % 5, 1 + trial % 3);
        let x = rng.vec(n * p);
        let y = rng.vec(n * c);
        for lambda in [0.0, 0.3] {
            let model = mvregress_fit(&x, p, &y, c, lambda).unwrap();
            let oracle = ridge_oracle(&x, p, &y, c, lambda);
            for (a, b) in model.weights.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-8, "trial {trial} lambda {lambda}: {a} vs {b}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn set_metrics_lie_in_unit_interval(
        rows in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 4), prop::collection::vec(any::<bool>(), 4)), 1..30)
    ) {
        let recs: Vec<PredictionRecord> = rows
            .into_iter()
            .map(|(s, t)| PredictionRecord::new("s", "p", s, t).unwrap())
            .collect();
        let m = multilabel_metrics(&recs, &[0.0; 4]).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.accuracy <= m.precision.min(m.recall) + 1e-12);
    }

    #[test]
    fn auc_is_invariant_to_monotone_rescaling(
        pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40)
    ) {
        let (scores, labels): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let (_, a) = roc_auc(&scores, &labels).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|s| 3.0 * s + 1.0).collect();
        let (_, b) = roc_auc(&shifted, &labels).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let (_, c) = roc_auc(&scores, &flipped).unwrap();
        prop_assert!((a + c - 1.0).abs() < 1e-12);
    }
}
