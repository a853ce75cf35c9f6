//! ConSE: a seen-class softmax classifier whose top-T posteriors combine the
//! seen semantic vectors into an embedding, matched against candidates.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, Dataset, SemanticMatrix};
use crate::error::{Result, ZslError};
use crate::eval::ScoreTable;
use crate::scalar::Scalar;
use crate::sync::TrainStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ConseModel<T> {
    /// `S × D`.
    #[serde(with = "crate::report::zsfm_b64")]
    pub weights: Array2<T>,
    #[serde(with = "crate::report::zsfm_b64_vec")]
    pub bias: Array1<T>,
    /// Seen-class semantic rows in dense seen order.
    pub semantics_seen: SemanticMatrix<T>,
    pub top_t: usize,
    pub reg: T,
    pub stats: TrainStats,
}

/// Row-wise softmax of `x·Wᵀ + b`.
pub fn softmax_probabilities<T: Scalar>(
    weights: ArrayView2<T>,
    bias: ArrayView1<T>,
    x: ArrayView2<T>,
) -> Array2<T> {
    let mut logits = x.dot(&weights.t()) + &bias;
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let m = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let z: T = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    logits
}

/// Mean cross-entropy plus `reg/2·‖W‖²` (bias unpenalized), with gradients.
pub fn logistic_objective_and_gradient<T: Scalar>(
    weights: ArrayView2<T>,
    bias: ArrayView1<T>,
    x: ArrayView2<T>,
    labels: &[usize],
    reg: T,
) -> (T, Array2<T>, Array1<T>) {
    let n = T::of_usize(x.nrows());
    let mut p = softmax_probabilities(weights, bias, x);
    let mut loss = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        loss = loss - p[[i, y]].max(T::min_positive_value()).ln();
        p[[i, y]] = p[[i, y]] - T::one();
    }
    p.mapv_inplace(|v| v / n);
    let gw = p.t().dot(&x) + &(&weights * reg);
    let gb = p.sum_axis(Axis(0));
    let reg_term = reg * T::of(0.5) * weights.iter().map(|&w| w * w).sum::<T>();
    (loss / n + reg_term, gw, gb)
}

/// Fits the seen-class classifier by gradient descent with Armijo backtracking.
pub fn train_conse<T: Scalar>(
    dataset: &Dataset<T>,
    semantics_seen: &SemanticMatrix<T>,
    reg: T,
    top_t: usize,
) -> Result<ConseModel<T>> {
    if !(reg > T::zero()) {
        return Err(ZslError::arg(format!("reg must be positive, got {reg}")));
    }
    let s = dataset.num_seen();
    if top_t == 0 || top_t > s {
        return Err(ZslError::arg(format!("top_t = {top_t} outside 1..={s}")));
    }
    if let Some(&bad) = dataset.labels.iter().find(|&&l| l >= s) {
        return Err(ZslError::data(format!(
            "training data contains unseen class {}",
            dataset.id_map.original(bad)
        )));
    }
    let semantics_seen = semantics_seen.select_ids(&dataset.split.seen)?;
    let x = dataset.features.view();
    let labels = &dataset.labels;
    let mut w = Array2::<T>::zeros((s, dataset.dim()));
    let mut b = Array1::<T>::zeros(s);
    let (mut f, mut gw, mut gb) = logistic_objective_and_gradient(w.view(), b.view(), x, labels, reg);
    let mut step = T::one();
    let tol = T::of(1e-7);
    let cap = 5000;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cap {
        iterations += 1;
        let gg = gw.iter().map(|&v| v * v).sum::<T>() + gb.iter().map(|&v| v * v).sum::<T>();
        if gg <= T::min_positive_value() {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let tw = &w - &(&gw * step);
            let tb = &b - &(&gb * step);
            let (ft, ngw, ngb) = logistic_objective_and_gradient(tw.view(), tb.view(), x, labels, reg);
            if ft <= f - T::of(1e-4) * step * gg {
                accepted = Some((tw, tb, ft, ngw, ngb));
                break;
            }
            step = step * T::of(0.5);
        }
        let Some((tw, tb, ft, ngw, ngb)) = accepted else {
            converged = true;
            break;
        };
        let change = (f - ft).abs() / f.abs().max(T::of(1e-12));
        w = tw;
        b = tb;
        f = ft;
        gw = ngw;
        gb = ngb;
        step = step * T::of(2.0);
        if change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("ConSE classifier stopped at the iteration cap ({cap})");
    }
    Ok(ConseModel {
        weights: w,
        bias: b,
        semantics_seen,
        top_t,
        reg,
        stats: TrainStats {
            objective: f.as_f64(),
            iterations,
            converged,
        },
    })
}

impl<T: Scalar> ConseModel<T> {
    /// Convex combination of the top-T seen semantic rows, weighted by posterior.
    pub fn embed(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.weights.ncols() {
            return Err(ZslError::dim(format!(
                "classifier expects {} features, got {}",
                self.weights.ncols(),
                x.ncols()
            )));
        }
        let p = softmax_probabilities(self.weights.view(), self.bias.view(), x);
        let a = &self.semantics_seen.vectors;
        let mut out = Array2::<T>::zeros((x.nrows(), a.ncols()));
        for (n, row) in p.axis_iter(Axis(0)).enumerate() {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).expect("finite").then(i.cmp(&j)));
            let mut z = T::zero();
            for &c in &order[..self.top_t] {
                out.row_mut(n).scaled_add(row[c], &a.row(c));
                z = z + row[c];
            }
            out.row_mut(n).mapv_inplace(|v| v / z);
        }
        Ok(out)
    }
}

/// Scores candidates by cosine similarity to the embedding, or by negative
/// Euclidean distance when the candidate semantics are unnormalized
/// (predicted exemplars).
pub fn predict_conse<T: Scalar>(
    model: &ConseModel<T>,
    semantics: &SemanticMatrix<T>,
    x: ArrayView2<T>,
    restrict: &[ClassId],
) -> Result<(Vec<ClassId>, ScoreTable<T>)> {
    if restrict.is_empty() {
        return Err(ZslError::arg("empty candidate set"));
    }
    let cand = semantics.select_ids(restrict)?;
    if cand.dim() != model.semantics_seen.dim() {
        return Err(ZslError::dim(format!(
            "candidate semantics have {} columns, seen semantics {}",
            cand.dim(),
            model.semantics_seen.dim()
        )));
    }
    let emb = model.embed(x)?;
    let scores = if semantics.normalized {
        let mut emb = emb;
        for (n, mut row) in emb.axis_iter_mut(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if !(norm > T::zero()) {
                return Err(ZslError::Numerical(format!(
                    "sample {n} has a zero semantic embedding"
                )));
            }
            row.mapv_inplace(|v| v / norm);
        }
        let norms = cand.vectors.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        let mut s = emb.dot(&cand.vectors.t());
        for (c, &nc) in norms.iter().enumerate() {
            s.column_mut(c).mapv_inplace(|v| v / nc);
        }
        s
    } else {
        crate::linalg::sq_euclidean_cross(emb.view(), cand.vectors.view())?.mapv(|d| -d.sqrt())
    };
    let table = ScoreTable::new(scores, restrict.to_vec(), None)?;
    Ok((table.argmax(), table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClassSplit, Partition};
    use ndarray::array;

    fn two_class() -> (Dataset<f64>, SemanticMatrix<f64>) {
        let split = ClassSplit::new(vec![0, 1], vec![2, 3]).unwrap();
        let x = array![[2.0, 0.1], [1.5, -0.3], [-0.2, 1.8], [0.1, 2.2]];
        let ds = Dataset::new(x, &[0, 0, 1, 1], split, Partition::Train).unwrap();
        let sem = SemanticMatrix::normalized(
            array![[1.0, 0.0], [0.0, 1.0], [0.9, 0.1], [0.2, 0.8]],
            vec![0, 1, 2, 3],
        )
        .unwrap();
        (ds, sem)
    }

    #[test]
    fn separable_training_and_top1_embedding() {
        let (ds, sem) = two_class();
        let m = train_conse(&ds, &sem, 1e-3, 1).unwrap();
        assert!(m.stats.converged);
        let p = softmax_probabilities(m.weights.view(), m.bias.view(), ds.features.view());
        for (i, row) in p.axis_iter(Axis(0)).enumerate() {
            assert!((row.sum() - 1.0).abs() < 1e-10);
            let best = if row[0] >= row[1] { 0 } else { 1 };
            assert_eq!(best, ds.labels[i]);
        }
        let e = m.embed(ds.features.view()).unwrap();
        assert_eq!(e.row(0), sem.vectors.row(0));
        let (pred, _) = predict_conse(&m, &sem, ds.features.view(), &[2, 3]).unwrap();
        assert_eq!(pred, vec![2, 2, 3, 3]);
        assert!(predict_conse(&m, &sem, ds.features.view(), &[]).is_err());
    }

    #[test]
    fn heavy_regularization_flattens_posteriors() {
        let (ds, sem) = two_class();
        let m = train_conse(&ds, &sem, 1e6, 2).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-5));
        let p = softmax_probabilities(m.weights.view(), m.bias.view(), ds.features.view());
        assert!(p.iter().all(|v| (v - 0.5).abs() < 1e-4));
    }

    #[test]
    fn argument_checks() {
        let (ds, sem) = two_class();
        assert!(train_conse(&ds, &sem, 0.0, 1).is_err());
        assert!(train_conse(&ds, &sem, 1.0, 3).is_err());
        assert!(train_conse(&ds, &sem, 1.0, 0).is_err());
    }
}
