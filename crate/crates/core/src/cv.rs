//! Class-wise cross-validation: folds of seen classes act in turn as
//! pseudo-unseen classes. The generalized variant additionally splits each
//! class's samples 80/20 so held-out seen data is available.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, ClassSplit, Dataset, Partition};
use crate::error::{Result, ZslError};
use crate::eval::{per_class_accuracy, ScoreTable};
use crate::exem::compute_exemplars;
use crate::gzsl::{calibrated_harmonic_mean, suc_curve};
use crate::linalg::{euclidean, pca_project};
use crate::pipeline::{gzsl_scores, train_method, Hypers, Method, TrainInput};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    /// Disjoint groups of seen classes.
    pub folds: Vec<Vec<ClassId>>,
    /// Per class: (80% rows, 20% rows) of the dataset the plan was built for.
    pub sample_splits: Option<BTreeMap<ClassId, (Vec<usize>, Vec<usize>)>>,
}

/// Seeded partition of the seen classes into `k` groups whose sizes differ by at most one.
pub fn class_wise_folds(seen: &[ClassId], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > seen.len() {
        return Err(ZslError::arg(format!(
            "fold count {k} outside 2..={}",
            seen.len()
        )));
    }
    let mut order = seen.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, c) in order.into_iter().enumerate() {
        folds[i % k].push(c);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan {
        folds,
        sample_splits: None,
    })
}

/// Class-wise folds plus a per-class 80/20 split of samples. The larger side
/// receives `ceil(0.8·n)` rows, but never all of them.
pub fn gzsl_folds<T: Scalar>(dataset: &Dataset<T>, k: usize, seed: u64) -> Result<FoldPlan> {
    let mut plan = class_wise_folds(&dataset.split.seen, k, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    let mut splits = BTreeMap::new();
    for (dense, &c) in dataset.split.seen.iter().enumerate() {
        let mut rows = dataset.indices_of(dense);
        let n = rows.len();
        if n < 2 {
            return Err(ZslError::data(format!(
                "class {c} has {n} samples; the 80/20 split needs at least 2"
            )));
        }
        rows.shuffle(&mut rng);
        let big = ((n as f64) * 0.8).ceil() as usize;
        let big = big.min(n - 1);
        let mut a = rows[..big].to_vec();
        let mut b = rows[big..].to_vec();
        a.sort_unstable();
        b.sort_unstable();
        splits.insert(c, (a, b));
    }
    plan.sample_splits = Some(splits);
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvObjective {
    /// Per-class accuracy on the pseudo-unseen fold (maximized).
    Accuracy,
    /// Mean distance between predicted and held-out exemplars (minimized).
    Distance,
    /// Area under the seen–unseen curve (maximized).
    Ausuc,
}

impl CvObjective {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cv-accuracy" | "accuracy" => Ok(CvObjective::Accuracy),
            "cv-distance" | "distance" => Ok(CvObjective::Distance),
            "cv-ausuc" | "ausuc" => Ok(CvObjective::Ausuc),
            other => Err(ZslError::Config(format!("unknown CV objective `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CvObjective::Accuracy => "cv-accuracy",
            CvObjective::Distance => "cv-distance",
            CvObjective::Ausuc => "cv-ausuc",
        }
    }

    fn failure(self) -> f64 {
        match self {
            CvObjective::Distance => f64::INFINITY,
            _ => f64::NEG_INFINITY,
        }
    }

    fn better(self, a: f64, b: f64) -> bool {
        match self {
            CvObjective::Distance => a < b,
            _ => a > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub hypers: Hypers,
    pub fold_scores: Vec<f64>,
    pub score: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub objective: CvObjective,
    pub cells: Vec<GridCell>,
    pub best: usize,
    pub best_hypers: Hypers,
    /// Calibration factor maximizing the mean harmonic mean (cv-ausuc only).
    pub gamma_star: Option<f64>,
    pub leakage_checks: usize,
    pub leakage_violations: usize,
}

/// Cartesian product in key order, the last key varying fastest.
pub fn grid_cells(grid: &BTreeMap<String, Vec<f64>>) -> Result<Vec<Hypers>> {
    if grid.is_empty() {
        return Err(ZslError::Config("hyper-parameter grid is empty".into()));
    }
    let mut cells = vec![Hypers::new()];
    for (name, values) in grid {
        if values.is_empty() {
            return Err(ZslError::Config(format!("grid entry `{name}` has no values")));
        }
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |&v| {
                    let mut c = c.clone();
                    c.insert(name.clone(), v);
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

/// Datasets of one fold and the pseudo split they use.
pub struct FoldData<T> {
    pub train: Dataset<T>,
    pub test: Dataset<T>,
    pub split: ClassSplit,
    /// Training rows whose class is pseudo-unseen, or rows shared with the test side.
    pub leaked_rows: usize,
}

/// Builds the training and evaluation sets for fold `f`.
pub fn fold_data<T: Scalar>(dataset: &Dataset<T>, plan: &FoldPlan, f: usize) -> Result<FoldData<T>> {
    let held: BTreeSet<ClassId> = plan.folds[f].iter().copied().collect();
    let pseudo_seen: Vec<ClassId> = dataset
        .split
        .seen
        .iter()
        .copied()
        .filter(|c| !held.contains(c))
        .collect();
    let pseudo_unseen: Vec<ClassId> = dataset
        .split
        .seen
        .iter()
        .copied()
        .filter(|c| held.contains(c))
        .collect();
    let split = ClassSplit::new(pseudo_seen.clone(), pseudo_unseen.clone())?;
    let labels = dataset.original_labels();
    let (train_rows, test_rows): (Vec<usize>, Vec<usize>) = match &plan.sample_splits {
        None => (0..dataset.len()).partition(|&i| !held.contains(&labels[i])),
        Some(s) => {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for c in &pseudo_seen {
                let (a, b) = &s[c];
                train.extend(a);
                test.extend(b);
            }
            for c in &pseudo_unseen {
                test.extend(&s[c].0);
            }
            train.sort_unstable();
            test.sort_unstable();
            (train, test)
        }
    };
    let test_set: BTreeSet<usize> = test_rows.iter().copied().collect();
    let leaked_rows = train_rows
        .iter()
        .filter(|&&i| held.contains(&labels[i]) || test_set.contains(&i))
        .count();
    let build = |rows: &[usize], partition| -> Result<Dataset<T>> {
        let sub_labels: Vec<ClassId> = rows.iter().map(|&i| labels[i]).collect();
        Dataset::new(
            dataset.features.select(ndarray::Axis(0), rows),
            &sub_labels,
            split.clone(),
            partition,
        )
    };
    Ok(FoldData {
        train: build(&train_rows, Partition::Train)?,
        test: build(&test_rows, Partition::Test)?,
        split,
        leaked_rows,
    })
}

struct FoldOutcome<T> {
    score: f64,
    warning: Option<String>,
    leaked: usize,
    table: Option<ScoreTable<T>>,
}

fn evaluate_fold<T: Scalar>(
    method: Method,
    input: &TrainInput<T>,
    hypers: &Hypers,
    plan: &FoldPlan,
    f: usize,
    objective: CvObjective,
    seed: u64,
) -> FoldOutcome<T> {
    let fail = |msg: String, leaked: usize| FoldOutcome {
        score: objective.failure(),
        warning: Some(msg),
        leaked,
        table: None,
    };
    let data = match fold_data(input.train, plan, f) {
        Ok(d) => d,
        Err(e) => return fail(format!("fold {f}: {e}"), 0),
    };
    if data.leaked_rows > 0 {
        return fail(
            format!("fold {f}: {} pseudo-unseen rows in training data", data.leaked_rows),
            data.leaked_rows,
        );
    }
    let fold_input = TrainInput {
        train: &data.train,
        ..*input
    };
    let model = match train_method(method, &fold_input, hypers, seed) {
        Ok(m) => m,
        Err(e) => return fail(format!("fold {f}: training failed: {e}"), 0),
    };
    if !model.converged() {
        return fail(format!("fold {f}: training did not converge"), 0);
    }
    let result: Result<(f64, Option<ScoreTable<T>>)> = (|| match objective {
        CvObjective::Accuracy => {
            let table = crate::pipeline::zsl_scores(&model, &data.test)?;
            let labels = table.true_labels.clone().expect("labeled");
            let acc = per_class_accuracy(&table.argmax(), &labels, &data.split.unseen)?;
            Ok((acc, None))
        }
        CvObjective::Distance => {
            let (predictor, exemplars) = model.exemplar_predictor().ok_or_else(|| {
                ZslError::Config(format!("cv-distance needs an exemplar method, got {}", method.name()))
            })?;
            let projected = pca_project(&predictor.pca, data.test.features.view())?;
            let truth = compute_exemplars(
                projected.view(),
                &data.test.original_labels(),
                &data.split.unseen,
            )?;
            let pred = exemplars.select_ids(&data.split.unseen)?;
            let total: f64 = (0..truth.z.nrows())
                .map(|i| euclidean(truth.z.row(i), pred.z.row(i)).as_f64())
                .sum();
            Ok((total / truth.z.nrows() as f64, None))
        }
        CvObjective::Ausuc => {
            let table = gzsl_scores(&model, &data.test)?;
            let curve = suc_curve(&table, &data.split)?;
            Ok((curve.ausuc, Some(table)))
        }
    })();
    match result {
        Ok((score, table)) => FoldOutcome {
            score,
            warning: None,
            leaked: 0,
            table,
        },
        Err(e) => fail(format!("fold {f}: evaluation failed: {e}"), 0),
    }
}

/// Evaluates every grid cell on every fold and picks the best cell (first on ties).
pub fn grid_search<T: Scalar>(
    method: Method,
    input: &TrainInput<T>,
    base: &Hypers,
    grid: &BTreeMap<String, Vec<f64>>,
    plan: &FoldPlan,
    objective: CvObjective,
    seed: u64,
) -> Result<GridReport> {
    if objective == CvObjective::Distance && !method.uses_exemplars() {
        return Err(ZslError::Config(format!(
            "cv-distance needs an exemplar method, got {}",
            method.name()
        )));
    }
    if objective == CvObjective::Ausuc && plan.sample_splits.is_none() {
        return Err(ZslError::Config("cv-ausuc needs a plan with per-class sample splits".into()));
    }
    let cells: Vec<Hypers> = grid_cells(grid)?
        .into_iter()
        .map(|c| {
            let mut h = base.clone();
            h.extend(c);
            h
        })
        .collect();
    let k = plan.folds.len();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    let outcomes: Vec<FoldOutcome<T>> = jobs
        .par_iter()
        .map(|&(c, f)| evaluate_fold(method, input, &cells[c], plan, f, objective, seed))
        .collect();

    let mut report_cells = Vec::with_capacity(cells.len());
    let mut tables: Vec<Vec<Option<ScoreTable<T>>>> = Vec::with_capacity(cells.len());
    let mut leakage_violations = 0;
    let mut outcomes = outcomes.into_iter();
    for hypers in cells {
        let mut fold_scores = Vec::with_capacity(k);
        let mut warnings = Vec::new();
        let mut cell_tables = Vec::with_capacity(k);
        for _ in 0..k {
            let o = outcomes.next().expect("one outcome per job");
            leakage_violations += o.leaked;
            fold_scores.push(o.score);
            if let Some(w) = o.warning {
                log::warn!("grid cell {hypers:?}: {w}");
                warnings.push(w);
            }
            cell_tables.push(o.table);
        }
        let score = if fold_scores.iter().all(|s| s.is_finite()) {
            fold_scores.iter().sum::<f64>() / k as f64
        } else {
            objective.failure()
        };
        report_cells.push(GridCell {
            hypers,
            fold_scores,
            score,
            warnings,
        });
        tables.push(cell_tables);
    }
    let mut best = 0;
    for (i, c) in report_cells.iter().enumerate() {
        if objective.better(c.score, report_cells[best].score) {
            best = i;
        }
    }
    let gamma_star = match objective {
        CvObjective::Ausuc if report_cells[best].score.is_finite() => {
            let folds: Vec<ScoreTable<T>> = tables[best].iter().flatten().cloned().collect();
            Some(select_gamma(&folds, plan, input.train)?)
        }
        _ => None,
    };
    Ok(GridReport {
        objective,
        best_hypers: report_cells[best].hypers.clone(),
        cells: report_cells,
        best,
        gamma_star,
        leakage_checks: jobs.len(),
        leakage_violations,
    })
}

/// γ maximizing the mean calibrated harmonic mean over folds, among the
/// interval representatives of every fold's curve; smallest γ on ties.
fn select_gamma<T: Scalar>(tables: &[ScoreTable<T>], plan: &FoldPlan, dataset: &Dataset<T>) -> Result<f64> {
    let mut splits = Vec::new();
    let mut candidates: Vec<T> = Vec::new();
    for (f, table) in tables.iter().enumerate() {
        let held: BTreeSet<ClassId> = plan.folds[f].iter().copied().collect();
        let split = ClassSplit::new(
            dataset.split.seen.iter().copied().filter(|c| !held.contains(c)).collect(),
            dataset.split.seen.iter().copied().filter(|c| held.contains(c)).collect(),
        )?;
        let curve = suc_curve(table, &split)?;
        candidates.extend((0..curve.points.len()).map(|i| curve.representative_gamma(i)));
        splits.push(split);
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    candidates.dedup();
    let mut best = (T::zero(), f64::NEG_INFINITY);
    for g in candidates {
        let mut total = 0.0;
        for (table, split) in tables.iter().zip(&splits) {
            total += calibrated_harmonic_mean(table, split, g)?.harmonic;
        }
        let mean = total / tables.len() as f64;
        if mean > best.1 {
            best = (g, mean);
        }
    }
    Ok(best.0.as_f64())
}

/// Runs grid searches in sequence, each starting from the previous winner.
pub fn staged_grid_search<T: Scalar>(
    method: Method,
    input: &TrainInput<T>,
    base: &Hypers,
    stages: &[BTreeMap<String, Vec<f64>>],
    plan: &FoldPlan,
    objective: CvObjective,
    seed: u64,
) -> Result<Vec<GridReport>> {
    let mut current = base.clone();
    let mut reports = Vec::with_capacity(stages.len());
    for grid in stages {
        let r = grid_search(method, input, &current, grid, plan, objective, seed)?;
        current = r.best_hypers.clone();
        reports.push(r);
    }
    Ok(reports)
}

/// One row per (cell, fold) plus one summary row per report.
pub fn reports_to_csv(reports: &[GridReport]) -> String {
    let names: BTreeSet<&String> = reports
        .iter()
        .flat_map(|r| r.cells.iter().flat_map(|c| c.hypers.keys()))
        .collect();
    let mut out = String::from("stage,cell,fold");
    for n in &names {
        out.push_str(&format!(",{n}"));
    }
    out.push_str(",score,status\n");
    let hyper_cols = |h: &Hypers| -> String {
        names
            .iter()
            .map(|n| h.get(*n).map(|v| format!(",{v}")).unwrap_or_else(|| ",".into()))
            .collect()
    };
    for (s, r) in reports.iter().enumerate() {
        for (i, c) in r.cells.iter().enumerate() {
            for (f, score) in c.fold_scores.iter().enumerate() {
                let status = if score.is_finite() { "ok" } else { "failed" };
                out.push_str(&format!("{s},{i},{f}{},{score},{status}\n", hyper_cols(&c.hypers)));
            }
        }
        let best = &r.cells[r.best];
        let status = match r.gamma_star {
            Some(g) => format!("best {} gamma_star={g}", r.objective.name()),
            None => format!("best {}", r.objective.name()),
        };
        out.push_str(&format!(
            "{s},{},summary{},{},{status}\n",
            r.best,
            hyper_cols(&best.hypers),
            best.score
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_classes() {
        let p = class_wise_folds(&[1, 2, 3, 4], 2, 0).unwrap();
        assert_eq!(p.folds.len(), 2);
        assert!(p.folds.iter().all(|f| f.len() == 2));
        let all: BTreeSet<_> = p.folds.iter().flatten().copied().collect();
        assert_eq!(all, [1, 2, 3, 4].into_iter().collect());
        let single = class_wise_folds(&[1, 2, 3], 3, 0).unwrap();
        assert!(single.folds.iter().all(|f| f.len() == 1));
        assert!(class_wise_folds(&[1, 2, 3], 4, 0).is_err());
        assert!(class_wise_folds(&[1, 2, 3], 1, 0).is_err());
        assert_eq!(class_wise_folds(&[1, 2, 3, 4, 5, 6], 3, 9).unwrap(), class_wise_folds(&[1, 2, 3, 4, 5, 6], 3, 9).unwrap());
    }

    #[test]
    fn grid_order_last_key_fastest() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), vec![1.0, 2.0]);
        g.insert("b".to_string(), vec![10.0, 20.0]);
        let cells = grid_cells(&g).unwrap();
        let pairs: Vec<(f64, f64)> = cells.iter().map(|c| (c["a"], c["b"])).collect();
        assert_eq!(pairs, vec![(1.0, 10.0), (1.0, 20.0), (2.0, 10.0), (2.0, 20.0)]);
        assert!(grid_cells(&BTreeMap::new()).is_err());
    }
}
