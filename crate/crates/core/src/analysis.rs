//! Diagnostics: row-wise correlation of distance matrices, k-nearest-neighbor
//! overlap between two class embeddings, and the PCA spectrum of a classifier matrix.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZslError};
use crate::linalg::{sq_euclidean_cross, symmetric_eigen};
use crate::scalar::Scalar;

/// Pairwise Euclidean distances between the rows of `x`.
pub fn distance_matrix<T: Scalar>(x: ArrayView2<T>) -> Result<Array2<T>> {
    Ok(sq_euclidean_cross(x, x)?.mapv(|v| v.sqrt()))
}

fn pearson<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mb = b.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x.as_f64() - ma, y.as_f64() - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Mean over rows of the Pearson correlation between matching rows.
pub fn distance_matrix_correlation<T: Scalar>(d1: ArrayView2<T>, d2: ArrayView2<T>) -> Result<f64> {
    if d1.shape() != d2.shape() {
        return Err(ZslError::dim(format!(
            "distance matrices {:?} and {:?} differ in shape",
            d1.shape(),
            d2.shape()
        )));
    }
    if d1.nrows() < 3 || d1.nrows() != d1.ncols() {
        return Err(ZslError::arg("distance matrices must be square with at least 3 rows"));
    }
    let mut total = 0.0;
    for (i, (r1, r2)) in d1.axis_iter(Axis(0)).zip(d2.axis_iter(Axis(0))).enumerate() {
        total += pearson(r1, r2)
            .ok_or_else(|| ZslError::data(format!("row {i} has zero variance")))?;
    }
    Ok(total / d1.nrows() as f64)
}

/// Indices of the `k` nearest other rows of row `i`, ties to the smaller index.
fn neighbors<T: Scalar>(d: &Array2<T>, i: usize, k: usize) -> BTreeSet<usize> {
    let mut idx: Vec<usize> = (0..d.ncols()).filter(|&j| j != i).collect();
    idx.sort_by(|&a, &b| d[[i, a]].partial_cmp(&d[[i, b]]).expect("finite").then(a.cmp(&b)));
    idx.into_iter().take(k).collect()
}

/// Mean percentage of shared k-nearest neighbors (self excluded) per class.
pub fn knn_overlap<T: Scalar>(a1: ArrayView2<T>, a2: ArrayView2<T>, k: usize) -> Result<f64> {
    let u = a1.nrows();
    if a2.nrows() != u {
        return Err(ZslError::dim(format!("{u} and {} classes", a2.nrows())));
    }
    if k == 0 || k + 1 > u {
        return Err(ZslError::arg(format!("k = {k} outside 1..={}", u.saturating_sub(1))));
    }
    let d1 = sq_euclidean_cross(a1, a1)?;
    let d2 = sq_euclidean_cross(a2, a2)?;
    let mut total = 0.0;
    for i in 0..u {
        let shared = neighbors(&d1, i, k).intersection(&neighbors(&d2, i, k)).count();
        total += shared as f64 / k as f64 * 100.0;
    }
    Ok(total / u as f64)
}

/// The neighbor count used for kNN overlap: 40% of the number of classes.
pub fn knn_k_for(num_classes: usize) -> usize {
    ((num_classes as f64 * 0.4).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    pub components: usize,
    pub percent: f64,
    pub explained_ratio: Vec<f64>,
}

/// Smallest number of principal components of the rows of `w` reaching
/// `threshold` of the variance, as a percentage of `min(S, D)`.
pub fn classifier_variance_profile<T: Scalar>(w: ArrayView2<T>, threshold: f64) -> Result<VarianceProfile> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ZslError::arg(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let (s, d) = w.dim();
    if s == 0 || d == 0 {
        return Err(ZslError::arg("empty classifier matrix"));
    }
    let mean = w.mean_axis(Axis(0)).expect("non-empty");
    let centered = &w - &mean;
    let small = if d <= s {
        centered.t().dot(&centered)
    } else {
        centered.dot(&centered.t())
    };
    let (values, _) = symmetric_eigen(small.view())?;
    let values: Vec<f64> = values.iter().map(|v| v.as_f64().max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(ZslError::data("classifier matrix has no variance"));
    }
    let ratio: Vec<f64> = values.iter().map(|v| v / total).collect();
    let mut cum = 0.0;
    let mut m = ratio.len();
    for (i, r) in ratio.iter().enumerate() {
        cum += r;
        if cum >= threshold - 1e-12 {
            m = i + 1;
            break;
        }
    }
    Ok(VarianceProfile {
        components: m,
        percent: 100.0 * m as f64 / s.min(d) as f64,
        explained_ratio: ratio,
    })
}
