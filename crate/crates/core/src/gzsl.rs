//! Generalized zero-shot evaluation: calibrated stacking, the Seen–Unseen
//! accuracy curve, its area and harmonic means.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{ClassId, ClassSplit};
use crate::error::{Result, ZslError};
use crate::eval::{classes_present, mean_class_fraction, per_class_accuracy, ScoreTable};
use crate::scalar::Scalar;

/// `argmax_c score_c − γ·[c seen]`. A seen/unseen tie goes to the unseen
/// class; other ties to the smallest id. `γ = +∞` restricts to unseen classes.
pub fn gzsl_predict<T: Scalar>(table: &ScoreTable<T>, seen_mask: &[bool], gamma: T) -> Result<Vec<ClassId>> {
    if seen_mask.len() != table.candidate_ids.len() {
        return Err(ZslError::dim(format!(
            "{} seen flags for {} candidates",
            seen_mask.len(),
            table.candidate_ids.len()
        )));
    }
    if !seen_mask.iter().any(|&s| s) || seen_mask.iter().all(|&s| s) {
        return Err(ZslError::arg("calibrated stacking needs seen and unseen candidates"));
    }
    Ok((0..table.len())
        .map(|n| {
            let (s, u) = side_best(table, seen_mask, n);
            let seen_score = table.scores[[n, s]];
            let unseen_score = table.scores[[n, u]];
            if gamma == T::infinity() || unseen_score >= seen_score - gamma {
                table.candidate_ids[u]
            } else {
                table.candidate_ids[s]
            }
        })
        .collect())
}

/// Best seen and best unseen column of row `n`, ties to the smallest id.
fn side_best<T: Scalar>(table: &ScoreTable<T>, seen_mask: &[bool], n: usize) -> (usize, usize) {
    let row = table.scores.row(n);
    let mut best: [Option<usize>; 2] = [None, None];
    for c in 0..row.len() {
        let side = if seen_mask[c] { 0 } else { 1 };
        let better = match best[side] {
            None => true,
            Some(b) => {
                row[c] > row[b] || (row[c] == row[b] && table.candidate_ids[c] < table.candidate_ids[b])
            }
        };
        if better {
            best[side] = Some(c);
        }
    }
    (best[0].expect("a seen candidate"), best[1].expect("an unseen candidate"))
}

/// Seen flag per candidate column.
pub fn seen_mask(candidates: &[ClassId], split: &ClassSplit) -> Vec<bool> {
    let seen: BTreeSet<ClassId> = split.seen.iter().copied().collect();
    candidates.iter().map(|c| seen.contains(c)).collect()
}

/// Seen–Unseen accuracy curve over the full calibration sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuCurve<T> {
    /// Distinct flip points, ascending.
    pub critical_gammas: Vec<T>,
    /// `(A_U→T, A_S→T)`: first at `γ → −∞`, then one per critical γ (value
    /// on `[γ_k, γ_{k+1})`).
    pub points: Vec<(f64, f64)>,
    pub ausuc: f64,
}

impl<T: Scalar> SuCurve<T> {
    /// A γ inside the interval on which `points[i]` holds.
    pub fn representative_gamma(&self, i: usize) -> T {
        let g = &self.critical_gammas;
        if g.is_empty() {
            return T::zero();
        }
        if i == 0 {
            g[0] - T::one()
        } else if i == g.len() {
            g[i - 1] + T::one()
        } else {
            (g[i - 1] + g[i]) / T::of(2.0)
        }
    }

    /// Point index and γ with the largest harmonic mean; first wins on ties.
    pub fn best_harmonic(&self) -> (usize, T, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &(u, s)) in self.points.iter().enumerate() {
            let h = harmonic_mean(s, u).unwrap_or(0.0);
            if h > best.1 {
                best = (i, h);
            }
        }
        (best.0, self.representative_gamma(best.0), best.1)
    }

    /// Rows `gamma,a_u,a_s`; the first row's γ is `-inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma,a_u,a_s\n");
        for (i, &(u, s)) in self.points.iter().enumerate() {
            let g = if i == 0 {
                "-inf".to_string()
            } else {
                format!("{}", self.critical_gammas[i - 1])
            };
            out.push_str(&format!("{g},{u},{s}\n"));
        }
        out
    }
}

/// Exact sweep: sample `n` moves from its best seen to its best unseen
/// candidate at `γ_n = max seen − max unseen`.
pub fn suc_curve<T: Scalar>(table: &ScoreTable<T>, split: &ClassSplit) -> Result<SuCurve<T>> {
    let labels = table
        .true_labels
        .as_ref()
        .ok_or_else(|| ZslError::arg("score table has no true labels"))?;
    let mask = seen_mask(&table.candidate_ids, split);
    if !mask.iter().any(|&s| s) || mask.iter().all(|&s| s) {
        return Err(ZslError::arg("calibrated stacking needs seen and unseen candidates"));
    }
    let seen_set: BTreeSet<ClassId> = split.seen.iter().copied().collect();
    let unseen_set: BTreeSet<ClassId> = split.unseen.iter().copied().collect();
    let present = classes_present(labels);
    let seen_classes: Vec<ClassId> = present.iter().copied().filter(|c| seen_set.contains(c)).collect();
    let unseen_classes: Vec<ClassId> = present.iter().copied().filter(|c| unseen_set.contains(c)).collect();
    if seen_classes.is_empty() {
        return Err(ZslError::data("test set has no seen-class samples"));
    }
    if unseen_classes.is_empty() {
        return Err(ZslError::data("test set has no unseen-class samples"));
    }
    let index = |classes: &[ClassId]| -> BTreeMap<ClassId, usize> {
        classes.iter().enumerate().map(|(i, &c)| (c, i)).collect()
    };
    let s_index = index(&seen_classes);
    let u_index = index(&unseen_classes);
    let mut s_total = vec![0usize; seen_classes.len()];
    let mut u_total = vec![0usize; unseen_classes.len()];
    let mut s_correct = vec![0usize; seen_classes.len()];
    let mut u_correct = vec![0usize; unseen_classes.len()];

    // (critical γ, side is seen, class slot, flips correctness)
    let mut events: Vec<(T, bool, usize)> = Vec::new();
    for (n, &y) in labels.iter().enumerate() {
        let (s, u) = side_best(table, &mask, n);
        let gamma = table.scores[[n, s]] - table.scores[[n, u]];
        if let Some(&i) = s_index.get(&y) {
            s_total[i] += 1;
            if table.candidate_ids[s] == y {
                s_correct[i] += 1;
                events.push((gamma, true, i));
            }
        } else if let Some(&i) = u_index.get(&y) {
            u_total[i] += 1;
            if table.candidate_ids[u] == y {
                events.push((gamma, false, i));
            }
        }
        // labels outside the split are ignored
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    let mut critical_gammas: Vec<T> = Vec::new();
    let mut points = vec![(
        mean_class_fraction(&u_correct, &u_total),
        mean_class_fraction(&s_correct, &s_total),
    )];
    let mut i = 0;
    while i < events.len() {
        let g = events[i].0;
        while i < events.len() && events[i].0 == g {
            let (_, seen, slot) = events[i];
            if seen {
                s_correct[slot] -= 1;
            } else {
                u_correct[slot] += 1;
            }
            i += 1;
        }
        critical_gammas.push(g);
        points.push((
            mean_class_fraction(&u_correct, &u_total),
            mean_class_fraction(&s_correct, &s_total),
        ));
    }
    let mut curve = SuCurve {
        critical_gammas,
        points,
        ausuc: 0.0,
    };
    curve.ausuc = ausuc(&curve)?;
    Ok(curve)
}

/// `Σ A_S·ΔA_U` over consecutive curve points.
pub fn ausuc<T: Scalar>(curve: &SuCurve<T>) -> Result<f64> {
    let mut area = 0.0;
    for w in curve.points.windows(2) {
        let ((u0, s0), (u1, s1)) = (w[0], w[1]);
        if u1 < u0 || s1 > s0 {
            return Err(ZslError::Numerical(format!(
                "seen-unseen curve is not a monotone staircase at ({u0}, {s0}) -> ({u1}, {s1})"
            )));
        }
        area += s1 * (u1 - u0);
    }
    Ok(area)
}

/// `2·a_s·a_u / (a_s + a_u)`, 0 when both are 0.
pub fn harmonic_mean(a_s: f64, a_u: f64) -> Result<f64> {
    if a_s < 0.0 || a_u < 0.0 || a_s.is_nan() || a_u.is_nan() {
        return Err(ZslError::arg(format!(
            "accuracies must be non-negative, got ({a_s}, {a_u})"
        )));
    }
    if a_s + a_u == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * a_s * a_u / (a_s + a_u))
}

/// Harmonic mean and both per-class accuracies at a fixed calibration factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedResult {
    pub harmonic: f64,
    pub a_u: f64,
    pub a_s: f64,
}

pub fn calibrated_harmonic_mean<T: Scalar>(
    table: &ScoreTable<T>,
    split: &ClassSplit,
    gamma_star: T,
) -> Result<CalibratedResult> {
    let labels = table
        .true_labels
        .as_ref()
        .ok_or_else(|| ZslError::arg("score table has no true labels"))?;
    let mask = seen_mask(&table.candidate_ids, split);
    let preds = gzsl_predict(table, &mask, gamma_star)?;
    let present = classes_present(labels);
    let seen: Vec<ClassId> = present.iter().copied().filter(|c| split.seen.contains(c)).collect();
    let unseen: Vec<ClassId> = present.iter().copied().filter(|c| split.unseen.contains(c)).collect();
    if seen.is_empty() || unseen.is_empty() {
        return Err(ZslError::data("test set needs both seen and unseen samples"));
    }
    let a_s = per_class_accuracy(&preds, labels, &seen)?;
    let a_u = per_class_accuracy(&preds, labels, &unseen)?;
    Ok(CalibratedResult {
        harmonic: harmonic_mean(a_s, a_u)?,
        a_u,
        a_s,
    })
}
