//! Conventional zero-shot metrics: per-class and per-sample accuracy, flat
//! hit@K and hierarchical precision@K.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};

use crate::data::{ClassId, LabelHierarchy};
use crate::error::{Result, ZslError};
use crate::scalar::Scalar;

/// Scores of every sample against a candidate label set; higher is better.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable<T> {
    pub scores: Array2<T>,
    pub candidate_ids: Vec<ClassId>,
    /// True label per row when known. Labels outside the candidate set are
    /// allowed and always count as misses.
    pub true_labels: Option<Vec<ClassId>>,
}

impl<T: Scalar> ScoreTable<T> {
    pub fn new(
        scores: Array2<T>,
        candidate_ids: Vec<ClassId>,
        true_labels: Option<Vec<ClassId>>,
    ) -> Result<Self> {
        if scores.ncols() != candidate_ids.len() {
            return Err(ZslError::dim(format!(
                "{} score columns but {} candidates",
                scores.ncols(),
                candidate_ids.len()
            )));
        }
        let unique: BTreeSet<_> = candidate_ids.iter().collect();
        if unique.len() != candidate_ids.len() {
            return Err(ZslError::data("duplicate candidate class id"));
        }
        if let Some(l) = &true_labels {
            if l.len() != scores.nrows() {
                return Err(ZslError::dim(format!(
                    "{} score rows but {} labels",
                    scores.nrows(),
                    l.len()
                )));
            }
        }
        if scores.iter().any(|v| v.is_nan()) {
            return Err(ZslError::Numerical("score table contains NaN".into()));
        }
        Ok(ScoreTable {
            scores,
            candidate_ids,
            true_labels,
        })
    }

    pub fn with_labels(mut self, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != self.scores.nrows() {
            return Err(ZslError::dim(format!(
                "{} score rows but {} labels",
                self.scores.nrows(),
                labels.len()
            )));
        }
        self.true_labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.scores.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.nrows() == 0
    }

    /// Candidate columns of row `n`, best first; equal scores keep ascending id order.
    pub fn ranking(&self, n: usize) -> Vec<usize> {
        let row = self.scores.row(n);
        let mut idx: Vec<usize> = (0..self.candidate_ids.len()).collect();
        idx.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .expect("scores are not NaN")
                .then(self.candidate_ids[a].cmp(&self.candidate_ids[b]))
        });
        idx
    }

    /// Best candidate per row, ties to the smallest class id.
    pub fn argmax(&self) -> Vec<ClassId> {
        self.scores
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best]
                        || (row[c] == row[best] && self.candidate_ids[c] < self.candidate_ids[best])
                    {
                        best = c;
                    }
                }
                self.candidate_ids[best]
            })
            .collect()
    }

    /// Columns for the candidates in `ids`, in that order.
    pub fn restrict(&self, ids: &[ClassId]) -> Result<Self> {
        let cols = ids
            .iter()
            .map(|id| {
                self.candidate_ids
                    .iter()
                    .position(|c| c == id)
                    .ok_or_else(|| ZslError::data(format!("class {id} is not a candidate")))
            })
            .collect::<Result<Vec<_>>>()?;
        ScoreTable::new(
            self.scores.select(Axis(1), &cols),
            ids.to_vec(),
            self.true_labels.clone(),
        )
    }

    /// Rows in `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        ScoreTable {
            scores: self.scores.select(Axis(0), rows),
            candidate_ids: self.candidate_ids.clone(),
            true_labels: self
                .true_labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
        }
    }

    fn labels(&self) -> Result<&[ClassId]> {
        self.true_labels
            .as_deref()
            .ok_or_else(|| ZslError::arg("score table has no true labels"))
    }
}

/// Mean over classes of `correct/total`, summed in the given order.
pub(crate) fn mean_class_fraction(correct: &[usize], totals: &[usize]) -> f64 {
    let mut sum = 0.0;
    for (&c, &t) in correct.iter().zip(totals) {
        sum += c as f64 / t as f64;
    }
    sum / totals.len() as f64
}

/// Mean over `classes` of the fraction of that class's samples predicted correctly.
pub fn per_class_accuracy(preds: &[ClassId], labels: &[ClassId], classes: &[ClassId]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(ZslError::dim(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if classes.is_empty() {
        return Err(ZslError::arg("no classes to average over"));
    }
    let index: BTreeMap<ClassId, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut correct = vec![0usize; classes.len()];
    let mut totals = vec![0usize; classes.len()];
    for (&p, &l) in preds.iter().zip(labels) {
        if let Some(&i) = index.get(&l) {
            totals[i] += 1;
            if p == l {
                correct[i] += 1;
            }
        }
    }
    if let Some(i) = totals.iter().position(|&t| t == 0) {
        return Err(ZslError::data(format!("class {} has no test samples", classes[i])));
    }
    Ok(mean_class_fraction(&correct, &totals))
}

/// Distinct labels in ascending id order.
pub fn classes_present(labels: &[ClassId]) -> Vec<ClassId> {
    labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Fraction of all samples predicted correctly.
pub fn per_sample_accuracy(preds: &[ClassId], labels: &[ClassId]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(ZslError::dim(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(ZslError::arg("no predictions"));
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Fraction of samples whose true label ranks within the top `k`.
pub fn flat_hit_at_k<T: Scalar>(table: &ScoreTable<T>, k: usize) -> Result<f64> {
    let c = table.candidate_ids.len();
    if k == 0 || k > c {
        return Err(ZslError::arg(format!("k = {k} outside 1..={c}")));
    }
    let labels = table.labels()?;
    if labels.is_empty() {
        return Err(ZslError::arg("no samples"));
    }
    let hits = (0..table.len())
        .filter(|&n| {
            table.ranking(n)[..k]
                .iter()
                .any(|&col| table.candidate_ids[col] == labels[n])
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Valid classes gathered by growing the hop radius around `class` until at
/// least `k` are collected.
pub fn h_correct_set(
    hierarchy: &LabelHierarchy,
    class: ClassId,
    k: usize,
    valid: &BTreeSet<ClassId>,
) -> Result<BTreeSet<ClassId>> {
    if !valid.contains(&class) {
        return Err(ZslError::arg(format!("class {class} is not a valid label")));
    }
    if k == 0 {
        return Err(ZslError::arg("k must be at least 1"));
    }
    let hops = hierarchy.hop_distances(class);
    let mut by_radius: BTreeMap<usize, Vec<ClassId>> = BTreeMap::new();
    for (&node, &d) in &hops {
        if valid.contains(&node) {
            by_radius.entry(d).or_default().push(node);
        }
    }
    let mut out = BTreeSet::new();
    out.insert(class);
    for (_, nodes) in by_radius {
        if out.len() >= k {
            break;
        }
        out.extend(nodes);
    }
    if out.len() < k {
        return Err(ZslError::data(format!(
            "only {} valid classes reachable from class {class}, need {k}",
            out.len()
        )));
    }
    Ok(out)
}

/// Mean over samples of `|top-k ∩ hCorrectSet(true, k)| / k`; valid labels are the candidates.
pub fn hierarchical_precision_at_k<T: Scalar>(
    table: &ScoreTable<T>,
    hierarchy: &LabelHierarchy,
    k: usize,
) -> Result<f64> {
    let c = table.candidate_ids.len();
    if k == 0 || k > c {
        return Err(ZslError::arg(format!("k = {k} outside 1..={c}")));
    }
    let labels = table.labels()?;
    if labels.is_empty() {
        return Err(ZslError::arg("no samples"));
    }
    let valid: BTreeSet<ClassId> = table.candidate_ids.iter().copied().collect();
    let mut cache: BTreeMap<ClassId, BTreeSet<ClassId>> = BTreeMap::new();
    let mut total = 0.0;
    for (n, &y) in labels.iter().enumerate() {
        if !cache.contains_key(&y) {
            cache.insert(y, h_correct_set(hierarchy, y, k, &valid)?);
        }
        let correct = &cache[&y];
        let overlap = table.ranking(n)[..k]
            .iter()
            .filter(|&&col| correct.contains(&table.candidate_ids[col]))
            .count();
        total += overlap as f64 / k as f64;
    }
    Ok(total / labels.len() as f64)
}
