//! Method menu shared by the command-line tool and cross-validation: builds a
//! trained model from a method name and hyper-parameter map, scores test
//! data against a candidate set, and evaluates score tables.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{concatenate, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::analysis::{distance_matrix, distance_matrix_correlation, knn_k_for, knn_overlap};
use crate::baselines::{predict_conse, train_conse, ConseModel};
use crate::data::{ClassId, ClassSplit, Dataset, IdMap, LabelHierarchy, SemanticMatrix};
use crate::error::{Result, ZslError};
use crate::eval::{
    classes_present, flat_hit_at_k, hierarchical_precision_at_k, per_class_accuracy,
    per_sample_accuracy, ScoreTable,
};
use crate::exem::{
    compute_exemplars, exemplars_as_semantics, fit_exemplar_predictor, nearest_in_projected, predict_exemplars,
    ExemplarConfig, ExemplarMetric, ExemplarPredictor, ExemplarSet,
};
use crate::linalg::{median_pairwise_distance, pca_project, KernelSpec};
use crate::report::MetricRecord;
use crate::scalar::Scalar;
use crate::svr::SvrKernel;
use crate::sync::{
    learn_phantom_semantics, predict_sync, train_sync, InitStrategy, LossVariant, SyncConfig,
    SyncModel,
};

/// Hyper-parameter name → value.
pub type Hypers = BTreeMap<String, f64>;

/// Recognized hyper-parameter names.
pub const HYPER_NAMES: &[&str] = &[
    "lambda",
    "sigma",
    "eta",
    "gamma_reg",
    "phantoms",
    "regularize_bases",
    "svr_lambda",
    "nu",
    "bandwidth",
    "pca_dim",
    "kernel_weight",
    "reg",
    "top_t",
    "max_iter",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Sync(LossVariant),
    Exem(ExemplarMetric),
    ExemSync(LossVariant),
    ExemConse,
    Conse,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self> {
        let m = match name {
            "sync-ovo" => Method::Sync(LossVariant::OneVsOther),
            "sync-cs" => Method::Sync(LossVariant::CrammerSinger),
            "sync-structured" => Method::Sync(LossVariant::Structured),
            "exem-1nn" => Method::Exem(ExemplarMetric::Euclidean),
            "exem-1nns" => Method::Exem(ExemplarMetric::Standardized),
            "exem-sync-ovo" => Method::ExemSync(LossVariant::OneVsOther),
            "exem-sync-cs" => Method::ExemSync(LossVariant::CrammerSinger),
            "exem-sync-structured" => Method::ExemSync(LossVariant::Structured),
            "exem-conse" => Method::ExemConse,
            "conse" => Method::Conse,
            other => return Err(ZslError::Config(format!("unknown method `{other}`"))),
        };
        Ok(m)
    }

    pub fn name(self) -> String {
        match self {
            Method::Sync(l) => format!("sync-{}", l.name()),
            Method::Exem(ExemplarMetric::Euclidean) => "exem-1nn".into(),
            Method::Exem(ExemplarMetric::Standardized) => "exem-1nns".into(),
            Method::ExemSync(l) => format!("exem-sync-{}", l.name()),
            Method::ExemConse => "exem-conse".into(),
            Method::Conse => "conse".into(),
        }
    }

    /// True for methods built on predicted exemplars.
    pub fn uses_exemplars(self) -> bool {
        matches!(self, Method::Exem(_) | Method::ExemSync(_) | Method::ExemConse)
    }
}

/// Rejects unknown hyper-parameter names.
pub fn check_hypers(h: &Hypers) -> Result<()> {
    for k in h.keys() {
        if !HYPER_NAMES.contains(&k.as_str()) {
            return Err(ZslError::Config(format!("unknown hyper-parameter `{k}`")));
        }
    }
    Ok(())
}

fn hyper(h: &Hypers, name: &str, default: f64) -> f64 {
    h.get(name).copied().unwrap_or(default)
}

fn count_hyper(h: &Hypers, name: &str, default: usize) -> Result<usize> {
    match h.get(name) {
        None => Ok(default),
        Some(&v) if v >= 1.0 && v.fract() == 0.0 => Ok(v as usize),
        Some(&v) => Err(ZslError::Config(format!("`{name}` must be a positive integer, got {v}"))),
    }
}

/// Training inputs: seen-class data and semantic vectors for every class.
#[derive(Debug, Clone, Copy)]
pub struct TrainInput<'a, T> {
    pub train: &'a Dataset<T>,
    pub semantics: &'a SemanticMatrix<T>,
    /// Optional second semantic type, mixed with the first through the SVR kernel.
    pub secondary: Option<&'a SemanticMatrix<T>>,
}

/// A trained model of any method in the menu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub enum TrainedModel<T> {
    Sync {
        model: SyncModel<T>,
        semantics: SemanticMatrix<T>,
    },
    Exem {
        predictor: ExemplarPredictor<T>,
        exemplars: ExemplarSet<T>,
        metric: ExemplarMetric,
    },
    ExemSync {
        predictor: ExemplarPredictor<T>,
        exemplars: ExemplarSet<T>,
        model: SyncModel<T>,
    },
    Conse {
        model: ConseModel<T>,
        semantics: SemanticMatrix<T>,
    },
    ExemConse {
        predictor: ExemplarPredictor<T>,
        exemplars: ExemplarSet<T>,
        model: ConseModel<T>,
    },
}

fn sync_config<T: Scalar>(
    loss: LossVariant,
    h: &Hypers,
    semantics: &SemanticMatrix<T>,
    seen: &[ClassId],
    seed: u64,
) -> Result<SyncConfig<T>> {
    let num_seen = seen.len();
    let sigma_scale = sigma_scale(semantics, seen)?;
    // phantoms live at the typical norm of the real class semantics
    let phantom_norm = if semantics.normalized {
        T::one()
    } else {
        let v = semantics.select_ids(seen)?.vectors;
        v.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<T>() / T::of_usize(num_seen.max(1))
    };
    let phantoms = count_hyper(h, "phantoms", num_seen)?;
    let init = match phantoms.cmp(&num_seen) {
        std::cmp::Ordering::Less => InitStrategy::Kmeans,
        std::cmp::Ordering::Equal => InitStrategy::Identity,
        std::cmp::Ordering::Greater => InitStrategy::Mixed,
    };
    let defaults = SyncConfig::<T>::default();
    Ok(SyncConfig {
        sigma: T::of(hyper(h, "sigma", 1.0)) * sigma_scale,
        lambda: T::of(hyper(h, "lambda", 1.0)),
        loss,
        regularize_bases: hyper(h, "regularize_bases", 0.0) != 0.0,
        eta: T::of(hyper(h, "eta", 0.0)),
        gamma_reg: T::of(hyper(h, "gamma_reg", 0.0)),
        h: phantom_norm,
        normalize_phantoms: semantics.normalized,
        phantoms: Some(phantoms),
        init,
        seed,
        max_iter: count_hyper(h, "max_iter", defaults.max_iter)?,
        ..defaults
    })
}

fn fit_sync<T: Scalar>(
    train: &Dataset<T>,
    semantics: &SemanticMatrix<T>,
    config: &SyncConfig<T>,
) -> Result<SyncModel<T>> {
    if config.eta > T::zero() || config.gamma_reg > T::zero() {
        Ok(learn_phantom_semantics(train, semantics, config)?.0)
    } else {
        train_sync(train, semantics, config)
    }
}

/// Semantic vectors of the seen classes and, for two semantic types, their
/// column-wise concatenation.
fn regression_inputs<T: Scalar>(input: &TrainInput<T>) -> Result<SemanticMatrix<T>> {
    match input.secondary {
        None => Ok(input.semantics.clone()),
        Some(second) => {
            let ids = &input.semantics.class_ids;
            let b = second.select_ids(ids)?;
            let v = concatenate(Axis(1), &[input.semantics.vectors.view(), b.vectors.view()])
                .map_err(|e| ZslError::dim(e.to_string()))?;
            SemanticMatrix::new(v, ids.clone(), input.semantics.normalized && second.normalized)
        }
    }
}

fn exemplar_config<T: Scalar>(input: &TrainInput<T>, h: &Hypers) -> Result<ExemplarConfig<T>> {
    let seen = &input.train.split.seen;
    let seen_sem = input.semantics.select_ids(seen)?;
    let bandwidth = hyper(h, "bandwidth", 1.0);
    let rbf = |m: &SemanticMatrix<T>| -> Result<KernelSpec<T>> {
        KernelSpec::rbf(T::of(bandwidth) * median_pairwise_distance(m.vectors.view())?)
    };
    let kernel = match input.secondary {
        None => SvrKernel::Rbf(rbf(&seen_sem)?),
        Some(second) => {
            let w = hyper(h, "kernel_weight", 0.5);
            let first = rbf(&seen_sem)?;
            let second = rbf(&second.select_ids(seen)?)?;
            SvrKernel::Mixture {
                split: input.semantics.dim(),
                first: KernelSpec::new(first.bandwidth, T::of(w))?,
                second,
            }
        }
    };
    let rows = input.train.len();
    let default_dim = input.train.dim().min(rows.saturating_sub(1)).max(1);
    Ok(ExemplarConfig {
        pca_dim: count_hyper(h, "pca_dim", default_dim)?,
        lambda: T::of(hyper(h, "svr_lambda", 1.0)),
        nu: T::of(hyper(h, "nu", 0.5)),
        kernel,
    })
}

/// Fits the exemplar predictor and predicts exemplars for every class.
pub fn fit_exemplars<T: Scalar>(
    input: &TrainInput<T>,
    h: &Hypers,
) -> Result<(ExemplarPredictor<T>, ExemplarSet<T>)> {
    let config = exemplar_config(input, h)?;
    let inputs = regression_inputs(input)?;
    let predictor = fit_exemplar_predictor(input.train, &inputs, &config)?;
    let exemplars = predict_exemplars(&predictor, &inputs)?;
    Ok((predictor, exemplars))
}

/// Trains `method` on seen-class data.
pub fn train_method<T: Scalar>(
    method: Method,
    input: &TrainInput<T>,
    h: &Hypers,
    seed: u64,
) -> Result<TrainedModel<T>> {
    check_hypers(h)?;
    let train = input.train;
    let s = train.num_seen();
    match method {
        Method::Sync(loss) => {
            let cfg = sync_config(loss, h, input.semantics, &train.split.seen, seed)?;
            let model = fit_sync(train, input.semantics, &cfg)?;
            Ok(TrainedModel::Sync {
                model,
                semantics: input.semantics.clone(),
            })
        }
        Method::Exem(metric) => {
            let (predictor, exemplars) = fit_exemplars(input, h)?;
            Ok(TrainedModel::Exem {
                predictor,
                exemplars,
                metric,
            })
        }
        Method::ExemSync(loss) => {
            let (predictor, exemplars) = fit_exemplars(input, h)?;
            let sem = exemplars_as_semantics(&exemplars);
            let cfg = sync_config(loss, h, &sem, &train.split.seen, seed)?;
            let model = fit_sync(train, &sem, &cfg)?;
            Ok(TrainedModel::ExemSync {
                predictor,
                exemplars,
                model,
            })
        }
        Method::Conse => {
            let top_t = count_hyper(h, "top_t", s.min(10))?;
            let model = train_conse(train, input.semantics, T::of(hyper(h, "reg", 1e-3)), top_t)?;
            Ok(TrainedModel::Conse {
                model,
                semantics: input.semantics.clone(),
            })
        }
        Method::ExemConse => {
            let (predictor, exemplars) = fit_exemplars(input, h)?;
            let sem = exemplars_as_semantics(&exemplars);
            let top_t = count_hyper(h, "top_t", s.min(10))?;
            let model = train_conse(train, &sem, T::of(hyper(h, "reg", 1e-3)), top_t)?;
            Ok(TrainedModel::ExemConse {
                predictor,
                exemplars,
                model,
            })
        }
    }
}

/// 1 for unit-normalized semantics; otherwise the median pairwise distance
/// of the seen rows, so that `sigma` is given in those units.
fn sigma_scale<T: Scalar>(semantics: &SemanticMatrix<T>, seen: &[ClassId]) -> Result<T> {
    if semantics.normalized {
        Ok(T::one())
    } else {
        median_pairwise_distance(semantics.select_ids(seen)?.vectors.view())
    }
}

impl<T: Scalar> TrainedModel<T> {
    /// Scores for every row of `x` against `candidates` (higher is better).
    pub fn score(&self, x: ArrayView2<T>, candidates: &[ClassId]) -> Result<ScoreTable<T>> {
        match self {
            TrainedModel::Sync { model, semantics } => Ok(predict_sync(model, semantics, x, candidates)?.1),
            TrainedModel::Exem {
                predictor,
                exemplars,
                metric,
            } => {
                let projected = pca_project(&predictor.pca, x)?;
                let ex = exemplars.select_ids(candidates)?;
                Ok(nearest_in_projected(&ex, projected.view(), *metric, &predictor.intra_class_std)?.1)
            }
            TrainedModel::ExemSync { exemplars, model, .. } => {
                Ok(predict_sync(model, &exemplars_as_semantics(exemplars), x, candidates)?.1)
            }
            TrainedModel::Conse { model, semantics } => Ok(predict_conse(model, semantics, x, candidates)?.1),
            TrainedModel::ExemConse { exemplars, model, .. } => {
                Ok(predict_conse(model, &exemplars_as_semantics(exemplars), x, candidates)?.1)
            }
        }
    }

    /// False when any optimizer stopped at its cap or a regression was flagged degenerate.
    pub fn converged(&self) -> bool {
        match self {
            TrainedModel::Sync { model, .. } => model.stats.converged,
            TrainedModel::Exem { predictor, .. } => predictor.converged(),
            TrainedModel::ExemSync { predictor, model, .. } => predictor.converged() && model.stats.converged,
            TrainedModel::Conse { model, .. } => model.stats.converged,
            TrainedModel::ExemConse { predictor, model, .. } => predictor.converged() && model.stats.converged,
        }
    }

    /// The same nearest-exemplar model under another distance. Both metrics
    /// share one trained predictor, so no retraining is needed.
    pub fn with_exemplar_metric(self, metric: ExemplarMetric) -> Result<Self> {
        match self {
            TrainedModel::Exem { predictor, exemplars, .. } => Ok(TrainedModel::Exem {
                predictor,
                exemplars,
                metric,
            }),
            _ => Err(ZslError::Config(
                "only nearest-exemplar models can switch distance".into(),
            )),
        }
    }

    pub fn exemplar_predictor(&self) -> Option<(&ExemplarPredictor<T>, &ExemplarSet<T>)> {
        match self {
            TrainedModel::Exem { predictor, exemplars, .. }
            | TrainedModel::ExemSync { predictor, exemplars, .. }
            | TrainedModel::ExemConse { predictor, exemplars, .. } => Some((predictor, exemplars)),
            _ => None,
        }
    }

    /// Synthesized classifiers of the given classes, for SynC-based models.
    pub fn classifiers(&self, classes: &[ClassId]) -> Option<Result<ndarray::Array2<T>>> {
        match self {
            TrainedModel::Sync { model, semantics } => {
                Some(semantics.select_ids(classes).and_then(|s| model.classifiers(s.vectors.view())))
            }
            TrainedModel::ExemSync { model, exemplars, .. } => Some(
                exemplars
                    .select_ids(classes)
                    .and_then(|e| model.classifiers(e.z.view())),
            ),
            _ => None,
        }
    }
}

/// A trained model with the metadata needed to reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ModelEnvelope<T> {
    pub method: String,
    pub hypers: Hypers,
    pub seed: u64,
    pub split: ClassSplit,
    pub id_map: IdMap,
    pub model: TrainedModel<T>,
}

impl<T: Scalar> ModelEnvelope<T> {
    pub fn to_json(&self) -> Result<String> {
        crate::report::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ZslError::parse("model file", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::report::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(ZslError::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| ZslError::io(path, e))?;
        Self::from_json(&text)
    }

    /// The envelope as it reads back from disk (matrices stored in single precision).
    pub fn round_trip(&self) -> Result<Self> {
        Self::from_json(&self.to_json()?)
    }
}

/// Conventional-ZSL metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZslMetric {
    PerClassAccuracy,
    PerSampleAccuracy,
    FlatHit,
    HierarchicalPrecision,
}

impl ZslMetric {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per-class-accuracy" | "per-class" => Ok(ZslMetric::PerClassAccuracy),
            "per-sample-accuracy" | "per-sample" => Ok(ZslMetric::PerSampleAccuracy),
            "flat-hit" | "f@k" => Ok(ZslMetric::FlatHit),
            "hierarchical-precision" | "hp@k" => Ok(ZslMetric::HierarchicalPrecision),
            other => Err(ZslError::Config(format!("unknown metric `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ZslMetric::PerClassAccuracy => "per-class-accuracy",
            ZslMetric::PerSampleAccuracy => "per-sample-accuracy",
            ZslMetric::FlatHit => "flat-hit",
            ZslMetric::HierarchicalPrecision => "hierarchical-precision",
        }
    }
}

/// Evaluates a labeled score table; `k` metrics are reported for every value in `ks`.
pub fn zsl_metrics<T: Scalar>(
    table: &ScoreTable<T>,
    metrics: &[ZslMetric],
    ks: &[usize],
    hierarchy: Option<&LabelHierarchy>,
) -> Result<Vec<MetricRecord>> {
    let labels = table
        .true_labels
        .as_ref()
        .ok_or_else(|| ZslError::arg("score table has no true labels"))?;
    let preds = table.argmax();
    let c = table.candidate_ids.len();
    let mut out = Vec::new();
    for &m in metrics {
        match m {
            ZslMetric::PerClassAccuracy => out.push(MetricRecord {
                metric: m.name().into(),
                value: per_class_accuracy(&preds, labels, &classes_present(labels))?,
                k: None,
                candidate_set_size: c,
            }),
            ZslMetric::PerSampleAccuracy => out.push(MetricRecord {
                metric: m.name().into(),
                value: per_sample_accuracy(&preds, labels)?,
                k: None,
                candidate_set_size: c,
            }),
            ZslMetric::FlatHit => {
                for &k in ks {
                    out.push(MetricRecord {
                        metric: m.name().into(),
                        value: flat_hit_at_k(table, k)?,
                        k: Some(k),
                        candidate_set_size: c,
                    });
                }
            }
            ZslMetric::HierarchicalPrecision => {
                let h = hierarchy.ok_or_else(|| {
                    ZslError::Config("hierarchical precision needs a label hierarchy".into())
                })?;
                for &k in ks {
                    out.push(MetricRecord {
                        metric: m.name().into(),
                        value: hierarchical_precision_at_k(table, h, k)?,
                        k: Some(k),
                        candidate_set_size: c,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Scores the unseen-class rows of `test` against the unseen candidates.
pub fn zsl_scores<T: Scalar>(model: &TrainedModel<T>, test: &Dataset<T>) -> Result<ScoreTable<T>> {
    let rows: Vec<usize> = (0..test.len()).filter(|&i| !test.is_seen(test.labels[i])).collect();
    if rows.is_empty() {
        return Err(ZslError::data("test set has no unseen-class samples"));
    }
    let sub = test.subset(&rows);
    model
        .score(sub.features.view(), &test.split.unseen)?
        .with_labels(sub.original_labels())
}

/// Scores every row of `test` against all classes.
pub fn gzsl_scores<T: Scalar>(model: &TrainedModel<T>, test: &Dataset<T>) -> Result<ScoreTable<T>> {
    model
        .score(test.features.view(), test.id_map.originals())?
        .with_labels(test.original_labels())
}

/// Predicted exemplars of the unseen classes against the held-out "true"
/// exemplars (projected means of the unseen test rows), with the raw semantic
/// vectors as the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExemplarQuality {
    pub k: usize,
    pub correlation_predicted: f64,
    pub correlation_semantic: f64,
    pub knn_predicted: f64,
    pub knn_semantic: f64,
}

pub fn exemplar_quality<T: Scalar>(
    model: &TrainedModel<T>,
    test: &Dataset<T>,
    semantics: &SemanticMatrix<T>,
) -> Result<ExemplarQuality> {
    let (predictor, exemplars) = model
        .exemplar_predictor()
        .ok_or_else(|| ZslError::Config("exemplar analysis needs an exemplar-based model".into()))?;
    let unseen = &test.split.unseen;
    let rows: Vec<usize> = (0..test.len()).filter(|&i| !test.is_seen(test.labels[i])).collect();
    let sub = test.subset(&rows);
    let projected = pca_project(&predictor.pca, sub.features.view())?;
    let truth = compute_exemplars(projected.view(), &sub.original_labels(), unseen)?;
    let predicted = exemplars.select_ids(unseen)?;
    let semantic = semantics.select_ids(unseen)?;
    let d_true = distance_matrix(truth.z.view())?;
    let k = knn_k_for(unseen.len());
    Ok(ExemplarQuality {
        k,
        correlation_predicted: distance_matrix_correlation(distance_matrix(predicted.z.view())?.view(), d_true.view())?,
        correlation_semantic: distance_matrix_correlation(distance_matrix(semantic.vectors.view())?.view(), d_true.view())?,
        knn_predicted: knn_overlap(predicted.z.view(), truth.z.view(), k)?,
        knn_semantic: knn_overlap(semantic.vectors.view(), truth.z.view(), k)?,
    })
}
