// Diagnostics against brute-force oracles, and fold construction.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;

use zsl_core::analysis::{classifier_variance_profile, distance_matrix, distance_matrix_correlation, knn_overlap};
use zsl_core::cv::{class_wise_folds, fold_data, grid_search, gzsl_folds, CvObjective};
use zsl_core::data::ClassId;
use zsl_core::pipeline::{Hypers, Method, TrainInput};
use zsl_core::synth::{generate, SynthConfig};

fn two_pass_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn brute_neighbors(x: ArrayView2<f64>, i: usize, k: usize) -> BTreeSet<usize> {
    let mut d: Vec<(f64, usize)> = (0..x.nrows())
        .filter(|&j| j != i)
        .map(|j| (x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum(), j))
        .collect();
    d.sort_by(|p, q| p.partial_cmp(q).unwrap());
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(mut a: Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[[i, j]].powi(2)).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut v: Vec<f64> = (0..n).map(|i| a[[i, i]].max(0.0)).collect();
    v.sort_by(|x, y| y.partial_cmp(x).unwrap());
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn correlation_matches_two_pass_oracle(seed in any::<u64>(), n in 3usize..9) {
        let mut rng = common::rng(seed);
        let d1 = distance_matrix(common::random_matrix(&mut rng, n, 3).view()).unwrap();
        let d2 = distance_matrix(common::random_matrix(&mut rng, n, 4).view()).unwrap();
        let oracle = (0..n).map(|i| two_pass_pearson(&d1.row(i).to_vec(), &d2.row(i).to_vec())).sum::<f64>() / n as f64;
        prop_assert!((distance_matrix_correlation(d1.view(), d2.view()).unwrap() - oracle).abs() <= 1e-12);
        // positive affine maps of one side leave every row correlation unchanged
        let moved = d2.mapv(|v| 3.5 * v + 2.0);
        let a = distance_matrix_correlation(d1.view(), d2.view()).unwrap();
        let b = distance_matrix_correlation(d1.view(), moved.view()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((distance_matrix_correlation(d1.view(), d1.view()).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn knn_overlap_matches_brute_force(seed in any::<u64>(), n in 3usize..10, k_frac in 0.0f64..1.0) {
        let mut rng = common::rng(seed);
        let a = common::random_matrix(&mut rng, n, 3);
        let b = common::random_matrix(&mut rng, n, 5);
        let k = 1 + (k_frac * (n - 2) as f64) as usize;
        let oracle = (0..n)
            .map(|i| brute_neighbors(a.view(), i, k).intersection(&brute_neighbors(b.view(), i, k)).count() as f64 / k as f64 * 100.0)
            .sum::<f64>() / n as f64;
        let got = knn_overlap(a.view(), b.view(), k).unwrap();
        prop_assert!((got - oracle).abs() <= 1e-9);
        prop_assert_eq!(got, knn_overlap(b.view(), a.view(), k).unwrap());
        prop_assert_eq!(knn_overlap(a.view(), a.view(), k).unwrap(), 100.0);
    }

    #[test]
    fn knn_overlap_ignores_scaling_and_translation(seed in any::<u64>(), power in -3i32..4, shift in -4.0f64..4.0) {
        let mut rng = common::rng(seed);
        let a = common::random_matrix(&mut rng, 7, 3);
        let moved = a.mapv(|v| v * 2f64.powi(power) + shift);
        prop_assert_eq!(knn_overlap(a.view(), moved.view(), 3).unwrap(), 100.0);
    }

    #[test]
    fn variance_profile_matches_jacobi_spectrum(seed in any::<u64>(), s in 2usize..9, d in 2usize..7, threshold in 0.5f64..0.99) {
        let mut rng = common::rng(seed);
        let w = common::random_matrix(&mut rng, s, d);
        let mean = w.mean_axis(ndarray::Axis(0)).unwrap();
        let c = &w - &mean;
        let values = jacobi_eigenvalues(c.t().dot(&c));
        let total: f64 = values.iter().sum();
        let ratio: Vec<f64> = values.iter().map(|v| v / total).collect();
        let mut cum = 0.0;
        let components = ratio.iter().position(|r| { cum += r; cum >= threshold - 1e-12 }).unwrap() + 1;
        let got = classifier_variance_profile(w.view(), threshold).unwrap();
        prop_assert_eq!(got.components, components);
        prop_assert!((got.percent - 100.0 * components as f64 / s.min(d) as f64).abs() <= 1e-12);
        for (g, o) in got.explained_ratio.iter().zip(&ratio) {
            prop_assert!((g - o).abs() <= 1e-9);
        }
    }

    #[test]
    fn class_folds_partition_the_seen_classes(seed in any::<u64>(), n in 2usize..30, k_frac in 0.0f64..1.0) {
        let seen: Vec<ClassId> = (0..n as ClassId).map(|c| c * 3 + 1).collect();
        let k = 2 + (k_frac * (n - 2) as f64) as usize;
        let plan = class_wise_folds(&seen, k, seed).unwrap();
        prop_assert_eq!(&plan, &class_wise_folds(&seen, k, seed).unwrap());
        prop_assert_eq!(plan.folds.len(), k);
        let all: Vec<ClassId> = plan.folds.iter().flatten().copied().collect();
        let unique: BTreeSet<ClassId> = all.iter().copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(unique, seen.iter().copied().collect::<BTreeSet<_>>());
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

fn small_synth(seed: u64) -> zsl_core::synth::SynthData {
    generate(&SynthConfig { seen: 8, unseen: 3, per_class: 12, seed, ..SynthConfig::default() }).unwrap()
}

#[test]
fn gzsl_sample_split_uses_the_ceiling_rule() {
    for seed in 0..5 {
        let data = small_synth(seed);
        let plan = gzsl_folds(&data.train, 4, seed).unwrap();
        let splits = plan.sample_splits.as_ref().unwrap();
        for (dense, c) in data.train.split.seen.iter().enumerate() {
            let rows = data.train.indices_of(dense);
            let (big, small) = &splits[c];
            let n = rows.len();
            assert_eq!(big.len(), ((n as f64 * 0.8).ceil() as usize).min(n - 1));
            let mut joined: Vec<usize> = big.iter().chain(small).copied().collect();
            joined.sort_unstable();
            assert_eq!(joined, rows);
        }
    }
}

#[test]
fn fold_data_never_trains_on_held_classes() {
    let data = small_synth(3);
    for plan in [class_wise_folds(&data.train.split.seen, 4, 1).unwrap(), gzsl_folds(&data.train, 4, 1).unwrap()] {
        for f in 0..plan.folds.len() {
            let fd = fold_data(&data.train, &plan, f).unwrap();
            assert_eq!(fd.leaked_rows, 0);
            let held: BTreeSet<ClassId> = plan.folds[f].iter().copied().collect();
            assert!(fd.train.original_labels().iter().all(|c| !held.contains(c)));
        }
    }
}

#[test]
fn grid_search_finds_the_planted_setting() {
    // a vanishing SVR budget flattens every predicted exemplar to its bias
    let data = small_synth(2);
    let input = TrainInput { train: &data.train, semantics: &data.semantics, secondary: None };
    let grid = BTreeMap::from([("svr_lambda".to_string(), vec![1e-6, 1e3])]);
    let plan = class_wise_folds(&data.train.split.seen, 4, 0).unwrap();
    let method = Method::parse("exem-1nn").unwrap();
    let report = grid_search(method, &input, &Hypers::new(), &grid, &plan, CvObjective::Accuracy, 0).unwrap();
    assert_eq!(report.best_hypers["svr_lambda"], 1e3);
    assert_eq!(report.leakage_violations, 0);
    let again = grid_search(method, &input, &Hypers::new(), &grid, &plan, CvObjective::Accuracy, 0).unwrap();
    assert_eq!(report, again);
}
