//! Visual exemplars: class means in a PCA space, predicted from semantic
//! vectors by one ν-SVR per dimension, and classification by the nearest
//! predicted exemplar.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, Dataset, SemanticMatrix};
use crate::error::{Result, ZslError};
use crate::eval::ScoreTable;
use crate::linalg::{fit_pca, pca_project, PcaModel};
use crate::scalar::Scalar;
use crate::svr::{train_nu_svr, SvrKernel, SvrModel};

/// One exemplar row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ExemplarSet<T> {
    #[serde(with = "crate::report::zsfm_b64")]
    pub z: Array2<T>,
    pub class_ids: Vec<ClassId>,
}

impl<T: Scalar> ExemplarSet<T> {
    pub fn row_of(&self, id: ClassId) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == id)
    }

    /// Rows reordered to follow `ids`.
    pub fn select_ids(&self, ids: &[ClassId]) -> Result<Self> {
        let rows = ids
            .iter()
            .map(|&id| {
                self.row_of(id)
                    .ok_or_else(|| ZslError::data(format!("no exemplar for class {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExemplarSet {
            z: self.z.select(Axis(0), &rows),
            class_ids: ids.to_vec(),
        })
    }
}

/// Mean projected row of every class in `classes`, in that order.
pub fn compute_exemplars<T: Scalar>(
    x_pca: ArrayView2<T>,
    labels: &[ClassId],
    classes: &[ClassId],
) -> Result<ExemplarSet<T>> {
    if labels.len() != x_pca.nrows() {
        return Err(ZslError::dim(format!(
            "{} projected rows but {} labels",
            x_pca.nrows(),
            labels.len()
        )));
    }
    let mut z = Array2::<T>::zeros((classes.len(), x_pca.ncols()));
    for (row, &c) in classes.iter().enumerate() {
        let mut count = 0usize;
        for (i, &l) in labels.iter().enumerate() {
            if l == c {
                z.row_mut(row).scaled_add(T::one(), &x_pca.row(i));
                count += 1;
            }
        }
        if count == 0 {
            return Err(ZslError::data(format!("class {c} has no samples")));
        }
        z.row_mut(row).mapv_inplace(|v| v / T::of_usize(count));
    }
    Ok(ExemplarSet {
        z,
        class_ids: classes.to_vec(),
    })
}

/// Regressor hyper-parameters shared by every exemplar dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarConfig<T> {
    pub pca_dim: usize,
    pub lambda: T,
    pub nu: T,
    pub kernel: SvrKernel<T>,
}

/// PCA projection plus one ν-SVR per projected dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ExemplarPredictor<T> {
    pub pca: PcaModel<T>,
    pub regressors: Vec<SvrModel<T>>,
    /// Mean over seen classes of the per-class sample standard deviation.
    #[serde(with = "crate::report::zsfm_b64_vec")]
    pub intra_class_std: Array1<T>,
    /// Exemplars of the seen training classes (regression targets).
    pub seen_exemplars: ExemplarSet<T>,
    /// Seen class pairs with identical semantics but different exemplars.
    pub degenerate_pairs: Vec<(ClassId, ClassId)>,
}

impl<T: Scalar> ExemplarPredictor<T> {
    pub fn converged(&self) -> bool {
        self.degenerate_pairs.is_empty() && self.regressors.iter().all(|r| r.converged)
    }
}

/// PCA on seen features, class exemplars, then independent per-dimension regressors.
pub fn fit_exemplar_predictor<T: Scalar>(
    dataset: &Dataset<T>,
    semantics: &SemanticMatrix<T>,
    config: &ExemplarConfig<T>,
) -> Result<ExemplarPredictor<T>> {
    let seen = &dataset.split.seen;
    if seen.len() < 2 {
        return Err(ZslError::arg(format!(
            "exemplar regression needs at least 2 seen classes (SVR needs 2 training points), got {}",
            seen.len()
        )));
    }
    let rows: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.is_seen(dataset.labels[i])).collect();
    let train = dataset.subset(&rows);
    let pca = fit_pca(train.features.view(), config.pca_dim)?;
    let projected = pca_project(&pca, train.features.view())?;
    let labels = train.original_labels();
    let exemplars = compute_exemplars(projected.view(), &labels, seen)?;
    let inputs = semantics.select_ids(seen)?.vectors;

    let mut degenerate_pairs = Vec::new();
    for i in 0..seen.len() {
        for j in i + 1..seen.len() {
            if inputs.row(i) == inputs.row(j) && exemplars.z.row(i) != exemplars.z.row(j) {
                degenerate_pairs.push((seen[i], seen[j]));
            }
        }
    }
    if !degenerate_pairs.is_empty() {
        log::warn!(
            "classes with identical semantic vectors but different exemplars: {degenerate_pairs:?}"
        );
    }

    let regressors = (0..pca.output_dim())
        .into_par_iter()
        .map(|k| {
            train_nu_svr(
                inputs.view(),
                exemplars.z.column(k),
                config.lambda,
                config.nu,
                config.kernel,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let intra_class_std = intra_class_std(projected.view(), &labels, seen)?;
    Ok(ExemplarPredictor {
        pca,
        regressors,
        intra_class_std,
        seen_exemplars: exemplars,
        degenerate_pairs,
    })
}

/// Per-dimension sample standard deviation (`n − 1`) averaged over classes
/// with at least two samples.
fn intra_class_std<T: Scalar>(
    projected: ArrayView2<T>,
    labels: &[ClassId],
    classes: &[ClassId],
) -> Result<Array1<T>> {
    let mut acc = Array1::<T>::zeros(projected.ncols());
    let mut used = 0usize;
    for &c in classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < 2 {
            continue;
        }
        let rows = projected.select(Axis(0), &idx);
        acc += &rows.std_axis(Axis(0), T::one());
        used += 1;
    }
    if used == 0 {
        return Err(ZslError::data(
            "no seen class has two samples; intra-class deviation undefined",
        ));
    }
    let std = acc / T::of_usize(used);
    if let Some(k) = std.iter().position(|&s| !(s > T::zero())) {
        return Err(ZslError::Numerical(format!(
            "intra-class standard deviation is zero in dimension {k}"
        )));
    }
    Ok(std)
}

/// Applies every regressor to each semantic row.
pub fn predict_exemplars<T: Scalar>(
    predictor: &ExemplarPredictor<T>,
    semantics: &SemanticMatrix<T>,
) -> Result<ExemplarSet<T>> {
    let d = predictor.regressors.len();
    let mut z = Array2::<T>::zeros((semantics.vectors.nrows(), d));
    for (k, reg) in predictor.regressors.iter().enumerate() {
        z.column_mut(k).assign(&reg.predict(semantics.vectors.view())?);
    }
    Ok(ExemplarSet {
        z,
        class_ids: semantics.class_ids.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExemplarMetric {
    Euclidean,
    /// Each dimension divided by the intra-class standard deviation.
    Standardized,
}

/// Nearest exemplar in PCA space. The score table holds negated distances so
/// that higher is better; ties go to the smallest class id.
pub fn classify_nearest_exemplar<T: Scalar>(
    exemplars: &ExemplarSet<T>,
    x: ArrayView2<T>,
    pca: &PcaModel<T>,
    metric: ExemplarMetric,
    std: &Array1<T>,
) -> Result<(Vec<ClassId>, ScoreTable<T>)> {
    let projected = pca_project(pca, x)?;
    nearest_in_projected(exemplars, projected.view(), metric, std)
}

pub(crate) fn nearest_in_projected<T: Scalar>(
    exemplars: &ExemplarSet<T>,
    projected: ArrayView2<T>,
    metric: ExemplarMetric,
    std: &Array1<T>,
) -> Result<(Vec<ClassId>, ScoreTable<T>)> {
    if exemplars.z.ncols() != projected.ncols() {
        return Err(ZslError::dim(format!(
            "exemplars have {} dimensions, projected data {}",
            exemplars.z.ncols(),
            projected.ncols()
        )));
    }
    let (p, z) = match metric {
        ExemplarMetric::Euclidean => (projected.to_owned(), exemplars.z.clone()),
        ExemplarMetric::Standardized => {
            if std.len() != projected.ncols() {
                return Err(ZslError::dim(format!(
                    "{} deviations for {} dimensions",
                    std.len(),
                    projected.ncols()
                )));
            }
            if let Some(k) = std.iter().position(|&s| !(s > T::zero())) {
                return Err(ZslError::arg(format!("standard deviation is zero in dimension {k}")));
            }
            (&projected / std, &exemplars.z / std)
        }
    };
    let d = crate::linalg::sq_euclidean_cross(p.view(), z.view())?;
    let scores = d.mapv(|v| -v.sqrt());
    let table = ScoreTable::new(scores, exemplars.class_ids.clone(), None)?;
    Ok((table.argmax(), table))
}

/// Exemplar rows as an unnormalized semantic matrix.
pub fn exemplars_as_semantics<T: Scalar>(exemplars: &ExemplarSet<T>) -> SemanticMatrix<T> {
    SemanticMatrix {
        vectors: exemplars.z.clone(),
        class_ids: exemplars.class_ids.clone(),
        normalized: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::KernelSpec;
    use ndarray::array;

    #[test]
    fn exemplar_means() {
        let x = array![[0.0, 0.0], [2.0, 2.0], [5.0, 1.0]];
        let e = compute_exemplars(x.view(), &[7, 7, 3], &[7, 3]).unwrap();
        assert_eq!(e.z, array![[1.0, 1.0], [5.0, 1.0]]);
        assert!(compute_exemplars(x.view(), &[7, 7, 3], &[7, 4]).is_err());
    }

    #[test]
    fn nearest_exemplar_hand_cases() {
        let ex = ExemplarSet {
            z: array![[0.0, 0.0], [4.0, 0.0]],
            class_ids: vec![10, 20],
        };
        let pca = PcaModel::identity(2);
        let std = array![2.0, 1.0];
        let (lab, t) =
            classify_nearest_exemplar(&ex, array![[1.8, 0.0]].view(), &pca, ExemplarMetric::Standardized, &std)
                .unwrap();
        assert_eq!(lab, vec![10]);
        assert!((t.scores[[0, 0]] + 0.9_f64).abs() < 1e-12);
        assert!((t.scores[[0, 1]] + 1.1_f64).abs() < 1e-12);
        let ones = array![1.0, 1.0];
        let (lab, _) =
            classify_nearest_exemplar(&ex, array![[2.2, 0.0]].view(), &pca, ExemplarMetric::Euclidean, &ones)
                .unwrap();
        assert_eq!(lab, vec![20]);
        let (lab, t) =
            classify_nearest_exemplar(&ex, array![[4.0, 0.0]].view(), &pca, ExemplarMetric::Euclidean, &ones)
                .unwrap();
        assert_eq!(lab, vec![20]);
        assert_eq!(t.scores[[0, 1]], 0.0);
        let zero = array![1.0, 0.0];
        assert!(
            classify_nearest_exemplar(&ex, array![[2.2, 0.0]].view(), &pca, ExemplarMetric::Standardized, &zero)
                .is_err()
        );
    }

    #[test]
    fn one_seen_class_is_rejected() {
        let split = crate::data::ClassSplit::new(vec![0], vec![1]).unwrap();
        let ds = Dataset::new(array![[0.0, 1.0], [1.0, 0.0]], &[0, 0], split, crate::data::Partition::Train)
            .unwrap();
        let sem = SemanticMatrix::normalized(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 1]).unwrap();
        let cfg = ExemplarConfig {
            pca_dim: 1,
            lambda: 1.0,
            nu: 0.5,
            kernel: SvrKernel::Rbf(KernelSpec::rbf(1.0).unwrap()),
        };
        assert!(fit_exemplar_predictor(&ds, &sem, &cfg).is_err());
    }

    #[test]
    fn as_semantics_keeps_ids_and_values() {
        let ex = ExemplarSet {
            z: array![[3.0, 4.0], [1.0, 0.0]],
            class_ids: vec![5, 2],
        };
        let s = exemplars_as_semantics(&ex);
        assert_eq!(s.class_ids, vec![5, 2]);
        assert_eq!(s.vectors, ex.z);
        assert!(!s.normalized);
    }
}
