// Ranking metrics and calibrated stacking.

mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use zsl_core::data::{ClassId, ClassSplit, LabelHierarchy};
use zsl_core::eval::{flat_hit_at_k, hierarchical_precision_at_k, per_class_accuracy, per_sample_accuracy, ScoreTable};
use zsl_core::gzsl::{calibrated_harmonic_mean, gzsl_predict, seen_mask, suc_curve};

/// Integer-valued scores so that shifts are exact; seen ids 0..s, unseen s..s+u.
fn gzsl_table(seed: u64, s: usize, u: usize, n: usize) -> (ScoreTable<f64>, ClassSplit) {
    let mut rng = common::rng(seed);
    let c = s + u;
    let scores = Array2::from_shape_fn((n, c), |_| rng.random_range(-8i32..8) as f64);
    let ids: Vec<ClassId> = (0..c as ClassId).collect();
    let mut labels: Vec<ClassId> = (0..c as ClassId).collect();
    labels.extend((c..n).map(|_| rng.random_range(0..c as ClassId)));
    let split = ClassSplit::new(ids[..s].to_vec(), ids[s..].to_vec()).unwrap();
    (ScoreTable::new(scores, ids, Some(labels)).unwrap(), split)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flat_hit_grows_with_k(seed in any::<u64>(), c in 2usize..8, n in 1usize..30) {
        let mut rng = common::rng(seed);
        let scores = common::random_matrix(&mut rng, n, c);
        let labels: Vec<ClassId> = (0..n).map(|_| rng.random_range(0..c as ClassId)).collect();
        let table = ScoreTable::new(scores, (0..c as ClassId).collect(), Some(labels.clone())).unwrap();
        let hits: Vec<f64> = (1..=c).map(|k| flat_hit_at_k(&table, k).unwrap()).collect();
        prop_assert!(hits.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(hits[c - 1], 1.0);
        prop_assert_eq!(hits[0], per_sample_accuracy(&table.argmax(), &labels).unwrap());
    }

    #[test]
    fn hierarchical_precision_at_one_is_flat_hit(seed in any::<u64>(), c in 2usize..8, n in 1usize..20) {
        let mut rng = common::rng(seed);
        // random tree: every node after the root hangs off an earlier one
        let edges: Vec<(ClassId, ClassId)> = (1..c as ClassId).map(|v| (rng.random_range(0..v), v)).collect();
        let hierarchy = LabelHierarchy::from_edges(edges).unwrap();
        let scores = common::random_matrix(&mut rng, n, c);
        let labels: Vec<ClassId> = (0..n).map(|_| rng.random_range(0..c as ClassId)).collect();
        let table = ScoreTable::new(scores, (0..c as ClassId).collect(), Some(labels)).unwrap();
        prop_assert_eq!(hierarchical_precision_at_k(&table, &hierarchy, 1).unwrap(), flat_hit_at_k(&table, 1).unwrap());
    }

    #[test]
    fn balanced_accuracies_agree(seed in any::<u64>(), c in 1usize..6, per in 1usize..6) {
        let mut rng = common::rng(seed);
        let labels: Vec<ClassId> = (0..c * per).map(|i| (i / per) as ClassId).collect();
        let preds: Vec<ClassId> = labels.iter().map(|&l| if rng.random_bool(0.6) { l } else { rng.random_range(0..c as ClassId) }).collect();
        let classes: Vec<ClassId> = (0..c as ClassId).collect();
        let a = per_class_accuracy(&preds, &labels, &classes).unwrap();
        let b = per_sample_accuracy(&preds, &labels).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn curve_is_a_bounded_staircase(seed in any::<u64>(), s in 1usize..4, u in 1usize..4, extra in 0usize..25) {
        let (table, split) = gzsl_table(seed, s, u, s + u + extra);
        let curve = suc_curve(&table, &split).unwrap();
        prop_assert_eq!(curve.points.len(), curve.critical_gammas.len() + 1);
        prop_assert!(curve.critical_gammas.windows(2).all(|w| w[0] < w[1]));
        for w in curve.points.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 <= w[0].1);
        }
        let (u_end, s_end) = *curve.points.last().unwrap();
        prop_assert_eq!(s_end, 0.0);
        prop_assert_eq!(curve.points[0].0, 0.0);
        prop_assert!((0.0..=1.0).contains(&curve.ausuc));
        prop_assert!(curve.ausuc <= curve.points[0].1 * u_end + 1e-12);
    }

    #[test]
    fn curve_points_match_fixed_gamma_evaluation(seed in any::<u64>(), s in 1usize..4, u in 1usize..4, extra in 0usize..20) {
        let (table, split) = gzsl_table(seed, s, u, s + u + extra);
        let curve = suc_curve(&table, &split).unwrap();
        for i in 0..curve.points.len() {
            let r = calibrated_harmonic_mean(&table, &split, curve.representative_gamma(i)).unwrap();
            prop_assert_eq!((r.a_u, r.a_s), curve.points[i]);
        }
    }

    #[test]
    fn seen_shift_moves_gammas_only(seed in any::<u64>(), shift in -5i32..6, s in 1usize..4, u in 1usize..4) {
        let (table, split) = gzsl_table(seed, s, u, 25);
        let mut shifted = table.clone();
        for c in 0..s {
            shifted.scores.column_mut(c).mapv_inplace(|v| v + shift as f64);
        }
        let a = suc_curve(&table, &split).unwrap();
        let b = suc_curve(&shifted, &split).unwrap();
        prop_assert_eq!(&a.points, &b.points);
        prop_assert_eq!(a.ausuc, b.ausuc);
        let moved: Vec<f64> = a.critical_gammas.iter().map(|g| g + shift as f64).collect();
        prop_assert_eq!(moved, b.critical_gammas);
    }

    #[test]
    fn infinite_gamma_is_unseen_only_prediction(seed in any::<u64>(), s in 1usize..4, u in 1usize..4) {
        let (table, split) = gzsl_table(seed, s, u, 20);
        let mask = seen_mask(&table.candidate_ids, &split);
        let stacked = gzsl_predict(&table, &mask, f64::INFINITY).unwrap();
        prop_assert_eq!(stacked, table.restrict(&split.unseen).unwrap().argmax());
        // and −∞ keeps every sample on the seen side
        let seen_side = gzsl_predict(&table, &mask, f64::NEG_INFINITY).unwrap();
        prop_assert!(seen_side.iter().all(|c| split.seen.contains(c)));
    }
}
