//! Distances, RBF kernels, kernel mixing, symmetric eigendecomposition and PCA.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZslError};
use crate::scalar::Scalar;

/// RBF kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<T> {
    pub bandwidth: T,
    /// Weight of this kernel when mixed with a second one.
    pub combination_weight: T,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn rbf(bandwidth: T) -> Result<Self> {
        Self::new(bandwidth, T::one())
    }

    pub fn new(bandwidth: T, combination_weight: T) -> Result<Self> {
        let spec = KernelSpec {
            bandwidth,
            combination_weight,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.bandwidth > T::zero()) || !self.bandwidth.is_finite() {
            return Err(ZslError::arg(format!(
                "RBF bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        check_weight(self.combination_weight)
    }
}

fn check_weight<T: Scalar>(w: T) -> Result<()> {
    if !(w >= T::zero() && w <= T::one()) {
        return Err(ZslError::arg(format!(
            "combination weight must lie in [0, 1], got {w}"
        )));
    }
    Ok(())
}

/// Squared Euclidean distance between every row of `a` and every row of `b`.
pub fn sq_euclidean_cross<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> Result<Array2<T>> {
    if a.ncols() != b.ncols() {
        return Err(ZslError::dim(format!(
            "distance operands have {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for (p, ap) in a.axis_iter(Axis(0)).enumerate() {
        for (q, bq) in b.axis_iter(Axis(0)).enumerate() {
            let d: T = ap
                .iter()
                .zip(bq.iter())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            out[[p, q]] = d.max(T::zero());
        }
    }
    Ok(out)
}

/// Euclidean distance between two vectors.
pub fn euclidean<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// `exp(-‖a_p − b_q‖² / (2·bandwidth²))`.
pub fn rbf_kernel<T: Scalar>(
    a: ArrayView2<T>,
    b: ArrayView2<T>,
    spec: &KernelSpec<T>,
) -> Result<Array2<T>> {
    spec.check()?;
    let denom = T::of(2.0) * spec.bandwidth * spec.bandwidth;
    Ok(sq_euclidean_cross(a, b)?.mapv(|d| (-d / denom).exp()))
}

/// `w·k1 + (1−w)·k2`.
pub fn combine_kernels<T: Scalar>(
    k1: ArrayView2<T>,
    k2: ArrayView2<T>,
    w: T,
) -> Result<Array2<T>> {
    if k1.shape() != k2.shape() {
        return Err(ZslError::dim(format!(
            "kernel shapes {:?} and {:?} differ",
            k1.shape(),
            k2.shape()
        )));
    }
    check_weight(w)?;
    Ok(&k1 * w + &k2 * (T::one() - w))
}

/// Median of the Euclidean distances over all unordered row pairs.
pub fn median_pairwise_distance<T: Scalar>(x: ArrayView2<T>) -> Result<T> {
    let n = x.nrows();
    if n < 2 {
        return Err(ZslError::arg("median pairwise distance needs at least two rows"));
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(euclidean(x.row(i), x.row(j)));
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = d.len();
    Ok(if m % 2 == 1 {
        d[m / 2]
    } else {
        (d[m / 2 - 1] + d[m / 2]) / T::of(2.0)
    })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in decreasing order and eigenvectors as the matching
/// columns. Deterministic for a given input.
pub fn symmetric_eigen<T: Scalar>(m: ArrayView2<T>) -> Result<(Array1<T>, Array2<T>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(ZslError::dim("eigendecomposition needs a square matrix"));
    }
    let mut a = m.to_owned();
    // symmetrize to absorb round-off in the caller's construction
    for i in 0..n {
        for j in i + 1..n {
            let s = (a[[i, j]] + a[[j, i]]) / T::of(2.0);
            a[[i, j]] = s;
            a[[j, i]] = s;
        }
    }
    let mut v = Array2::<T>::eye(n);
    let total: T = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let tol = T::epsilon() * total.max(T::min_positive_value());
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum::<T>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[[j, j]]
            .partial_cmp(&a[[i, i]])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });
    let values = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let vectors = v.select(Axis(1), &order);
    Ok((values, vectors))
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is non-negative.
pub(crate) fn fix_sign<T: Scalar>(mut v: ndarray::ArrayViewMut1<T>) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < T::zero() {
        v.mapv_inplace(|x| -x);
    }
}

/// Linear projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct PcaModel<T> {
    #[serde(with = "crate::report::zsfm_b64_vec")]
    pub mean: Array1<T>,
    /// `d × D`, orthonormal rows.
    #[serde(with = "crate::report::zsfm_b64")]
    pub projection: Array2<T>,
    #[serde(with = "crate::report::zsfm_b64_vec")]
    pub explained_variance: Array1<T>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn input_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.nrows()
    }

    /// Identity projection of width `dim`.
    pub fn identity(dim: usize) -> Self {
        PcaModel {
            mean: Array1::zeros(dim),
            projection: Array2::eye(dim),
            explained_variance: Array1::ones(dim),
        }
    }
}

/// Top-`d` principal directions of the sample covariance of `x`.
///
/// The `D × D` covariance is decomposed when `D ≤ N`, otherwise the `N × N`
/// Gram matrix of the centered data.
pub fn fit_pca<T: Scalar>(x: ArrayView2<T>, d: usize) -> Result<PcaModel<T>> {
    let (n, dim) = x.dim();
    if n < 2 {
        return Err(ZslError::arg("PCA needs at least two samples"));
    }
    if d == 0 || d > n.min(dim) {
        return Err(ZslError::arg(format!(
            "PCA dimension {d} outside 1..={}",
            n.min(dim)
        )));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let scale = T::one() / T::of_usize(n - 1);
    let (values, mut directions) = if dim <= n {
        let cov = centered.t().dot(&centered) * scale;
        let (vals, vecs) = symmetric_eigen(cov.view())?;
        (vals, vecs.t().to_owned())
    } else {
        let gram = centered.dot(&centered.t()) * scale;
        let (vals, vecs) = symmetric_eigen(gram.view())?;
        let mut dirs = Array2::<T>::zeros((n, dim));
        for k in 0..n {
            let u = vecs.column(k);
            let dir = centered.t().dot(&u);
            let norm = dir.dot(&dir).sqrt();
            if norm > T::zero() {
                dirs.row_mut(k).assign(&(dir / norm));
            }
        }
        (vals, dirs)
    };
    let top = values[0].max(T::zero());
    let floor = top * T::epsilon().sqrt();
    let rank = values.iter().take_while(|&&v| v > floor && v > T::zero()).count();
    if rank < d {
        return Err(ZslError::Numerical(format!(
            "data rank {rank} is below requested PCA dimension {d} (achievable rank {rank})"
        )));
    }
    let mut projection = directions.slice_mut(ndarray::s![..d, ..]).to_owned();
    for row in projection.axis_iter_mut(Axis(0)) {
        fix_sign(row);
    }
    directions = projection;
    Ok(PcaModel {
        mean,
        projection: directions,
        explained_variance: values.slice(ndarray::s![..d]).mapv(|v| v.max(T::zero())),
    })
}

/// Rows `M·(x − mean)`.
pub fn pca_project<T: Scalar>(model: &PcaModel<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
    if x.ncols() != model.input_dim() {
        return Err(ZslError::dim(format!(
            "PCA model expects {} columns, got {}",
            model.input_dim(),
            x.ncols()
        )));
    }
    let centered = &x - &model.mean;
    Ok(centered.dot(&model.projection.t()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sq_distances() {
        let z = array![[0.0f64, 0.0]];
        assert_eq!(sq_euclidean_cross(z.view(), z.view()).unwrap()[[0, 0]], 0.0);
        let d = sq_euclidean_cross(array![[1.0, 0.0]].view(), array![[0.0, 1.0]].view()).unwrap();
        assert_eq!(d[[0, 0]], 2.0);
        let d = sq_euclidean_cross(array![[1.0, 2.0], [3.0, 4.0]].view(), z.view()).unwrap();
        assert_eq!(d, array![[5.0], [25.0]]);
        assert!(sq_euclidean_cross(array![[1.0]].view(), z.view()).is_err());
    }

    #[test]
    fn rbf_values() {
        let a = array![[1.0f64, 0.0]];
        let b = array![[0.0f64, 1.0]];
        let spec = KernelSpec::rbf(1.0).unwrap();
        let k = rbf_kernel(a.view(), b.view(), &spec).unwrap();
        assert!((k[[0, 0]] - (-1.0f64).exp()).abs() < 1e-12);
        let kk = rbf_kernel(a.view(), a.view(), &spec).unwrap();
        assert_eq!(kk[[0, 0]], 1.0);
        let wide = KernelSpec::rbf(1e6).unwrap();
        assert!((rbf_kernel(a.view(), b.view(), &wide).unwrap()[[0, 0]] - 1.0).abs() < 1e-9);
        assert!(KernelSpec::rbf(0.0f64).is_err());
        assert!(KernelSpec::rbf(-1.0f64).is_err());
    }

    #[test]
    fn kernel_mixture() {
        let k1 = array![[1.0f64]];
        let k2 = array![[0.0f64]];
        assert_eq!(combine_kernels(k1.view(), k2.view(), 1.0).unwrap(), k1);
        assert_eq!(combine_kernels(k1.view(), k2.view(), 0.0).unwrap(), k2);
        assert_eq!(combine_kernels(k1.view(), k2.view(), 0.5).unwrap()[[0, 0]], 0.5);
        assert!(combine_kernels(k1.view(), k2.view(), 1.5).is_err());
        assert!(combine_kernels(k1.view(), array![[0.0, 1.0]].view(), 0.5).is_err());
    }

    #[test]
    fn pca_hand_example() {
        let x = array![[1.0f64, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]];
        let pca = fit_pca(x.view(), 2).unwrap();
        assert!((pca.projection[[0, 0]]).abs() < 1e-12);
        assert!((pca.projection[[0, 1]] - 1.0).abs() < 1e-12);
        assert!((pca.projection[[1, 0]] - 1.0).abs() < 1e-12);
        assert!((pca.explained_variance[0] - 8.0 / 3.0).abs() < 1e-12);
        assert!((pca.explained_variance[1] - 2.0 / 3.0).abs() < 1e-12);
        let p = pca_project(&pca, array![[1.0, 2.0]].view()).unwrap();
        assert!((p[[0, 0]] - 2.0).abs() < 1e-12 && (p[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_degenerate_line() {
        let x = array![[-2.0f64, 0.0], [1.0, 0.0], [4.0, 0.0]];
        let pca = fit_pca(x.view(), 1).unwrap();
        assert_eq!(pca.projection.row(0).to_vec(), vec![1.0, 0.0]);
        assert!((pca.explained_variance[0] - 9.0).abs() < 1e-12);
        let err = fit_pca(x.view(), 2).unwrap_err();
        assert!(err.to_string().contains("achievable rank 1"), "{err}");
    }

    #[test]
    fn pca_mean_projects_to_zero_and_identity() {
        let x = array![[1.0f64, 2.0, 0.5], [3.0, -1.0, 2.0], [0.0, 0.0, 1.0], [2.0, 5.0, -3.0]];
        let pca = fit_pca(x.view(), 2).unwrap();
        let mean = pca.mean.clone().insert_axis(Axis(0));
        let p = pca_project(&pca, mean.view()).unwrap();
        assert!(p.iter().all(|v| v.abs() < 1e-12));
        let id = PcaModel::identity(3);
        assert_eq!(pca_project(&id, x.view()).unwrap(), x);
        assert!(pca_project(&pca, array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn pca_full_rank_reconstructs() {
        let x = array![[1.0f64, 2.0, 0.5], [3.0, -1.0, 2.0], [0.0, 0.0, 1.0], [2.0, 5.0, -3.0]];
        let pca = fit_pca(x.view(), 3).unwrap();
        let p = pca_project(&pca, x.view()).unwrap();
        let back = p.dot(&pca.projection);
        let centered = &x - &pca.mean;
        for (a, b) in back.iter().zip(centered.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn pca_gram_route_matches_covariance_route() {
        // D > N forces the Gram path; compare against the covariance path on the transpose-free data
        let x = array![[1.0f64, 2.0, 0.5, 4.0], [3.0, -1.0, 2.0, 0.0], [0.0, 0.0, 1.0, 1.0]];
        let gram = fit_pca(x.view(), 2).unwrap();
        let centered = &x - &x.mean_axis(Axis(0)).unwrap();
        let cov = centered.t().dot(&centered) / 2.0;
        let (vals, vecs) = symmetric_eigen(cov.view()).unwrap();
        for k in 0..2 {
            assert!((gram.explained_variance[k] - vals[k]).abs() < 1e-10);
            let dot: f64 = gram.projection.row(k).dot(&vecs.column(k));
            assert!((dot.abs() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn median_distance() {
        let x = array![[0.0f64], [1.0], [3.0]];
        // pairs: 1, 3, 2
        assert_eq!(median_pairwise_distance(x.view()).unwrap(), 2.0);
    }
}
