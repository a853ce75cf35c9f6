//! Dataset model, file ingestion, normalization and split validation.
//!
//! Class ids read from disk are arbitrary integers. Internally every class is
//! addressed by a dense index: seen classes occupy `0..S` in split order and
//! unseen classes `S..S+U`. [`IdMap`] converts between the two.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZslError};
use crate::scalar::Scalar;

/// Class identifier as it appears in input files.
pub type ClassId = i64;

const ZSFM_MAGIC: &[u8; 4] = b"ZSFM";

/// Seen/unseen partition of the label space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub seen: Vec<ClassId>,
    pub unseen: Vec<ClassId>,
}

impl ClassSplit {
    pub fn new(seen: Vec<ClassId>, unseen: Vec<ClassId>) -> Result<Self> {
        let split = ClassSplit { seen, unseen };
        split.check()?;
        Ok(split)
    }

    /// Checks `seen ∩ unseen = ∅`, no duplicates and at least one seen class.
    pub fn check(&self) -> Result<()> {
        if self.seen.is_empty() {
            return Err(ZslError::data("split has no seen classes"));
        }
        let mut all = BTreeSet::new();
        for &id in &self.seen {
            if !all.insert(id) {
                return Err(ZslError::data(format!("class {id} listed twice in seen")));
            }
        }
        for &id in &self.unseen {
            if self.seen.contains(&id) {
                return Err(ZslError::data(format!(
                    "class {id} appears in both seen and unseen"
                )));
            }
            if !all.insert(id) {
                return Err(ZslError::data(format!("class {id} listed twice in unseen")));
            }
        }
        Ok(())
    }

    pub fn num_seen(&self) -> usize {
        self.seen.len()
    }

    pub fn num_unseen(&self) -> usize {
        self.unseen.len()
    }
}

/// Bijection between original class ids and dense indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<ClassId>", into = "Vec<ClassId>")]
pub struct IdMap {
    original: Vec<ClassId>,
    dense: HashMap<ClassId, usize>,
}

impl From<Vec<ClassId>> for IdMap {
    fn from(ids: Vec<ClassId>) -> Self {
        IdMap::from_ids(ids)
    }
}

impl From<IdMap> for Vec<ClassId> {
    fn from(map: IdMap) -> Self {
        map.original
    }
}

impl IdMap {
    pub fn from_split(split: &ClassSplit) -> Self {
        let original: Vec<ClassId> = split.seen.iter().chain(&split.unseen).copied().collect();
        Self::from_ids(original)
    }

    pub fn from_ids(original: Vec<ClassId>) -> Self {
        let dense = original.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        IdMap { original, dense }
    }

    pub fn dense(&self, id: ClassId) -> Option<usize> {
        self.dense.get(&id).copied()
    }

    pub fn original(&self, dense: usize) -> ClassId {
        self.original[dense]
    }

    pub fn originals(&self) -> &[ClassId] {
        &self.original
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }
}

/// Which side of an experiment a dataset feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    Train,
    Test,
}

/// Undirected label graph used for hierarchical precision.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelHierarchy {
    edges: Vec<(ClassId, ClassId)>,
    adjacency: BTreeMap<ClassId, BTreeSet<ClassId>>,
}

impl LabelHierarchy {
    pub fn from_edges(edges: Vec<(ClassId, ClassId)>) -> Result<Self> {
        let mut adjacency: BTreeMap<ClassId, BTreeSet<ClassId>> = BTreeMap::new();
        for &(p, c) in &edges {
            if p == c {
                return Err(ZslError::data(format!("self-loop on hierarchy node {p}")));
            }
            adjacency.entry(p).or_default().insert(c);
            adjacency.entry(c).or_default().insert(p);
        }
        Ok(LabelHierarchy { edges, adjacency })
    }

    pub fn edges(&self) -> &[(ClassId, ClassId)] {
        &self.edges
    }

    pub fn contains(&self, node: ClassId) -> bool {
        self.adjacency.contains_key(&node)
    }

    pub fn neighbors(&self, node: ClassId) -> impl Iterator<Item = ClassId> + '_ {
        self.adjacency
            .get(&node)
            .into_iter()
            .flat_map(|s| s.iter().copied())
    }

    /// Hop distance from `start` to every reachable node (BFS on the undirected graph).
    pub fn hop_distances(&self, start: ClassId) -> BTreeMap<ClassId, usize> {
        let mut dist = BTreeMap::new();
        dist.insert(start, 0usize);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            let d = dist[&n];
            for m in self.neighbors(n) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(m) {
                    e.insert(d + 1);
                    queue.push_back(m);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        match self.adjacency.keys().next() {
            None => true,
            Some(&first) => self.hop_distances(first).len() == self.adjacency.len(),
        }
    }
}

/// Labeled feature matrix bound to a class split.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub features: Array2<T>,
    /// Dense class index per row.
    pub labels: Vec<usize>,
    pub split: ClassSplit,
    pub id_map: IdMap,
    pub hierarchy: Option<LabelHierarchy>,
    pub partition: Partition,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset from original-id labels, checking every invariant.
    pub fn new(
        features: Array2<T>,
        labels: &[ClassId],
        split: ClassSplit,
        partition: Partition,
    ) -> Result<Self> {
        split.check()?;
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(ZslError::data("feature matrix is empty"));
        }
        if features.nrows() != labels.len() {
            return Err(ZslError::dim(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        check_finite(features.view(), "features")?;
        let id_map = IdMap::from_split(&split);
        let dense = labels
            .iter()
            .map(|&l| {
                id_map
                    .dense(l)
                    .ok_or_else(|| ZslError::data(format!("label {l} outside split")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            features,
            labels: dense,
            split,
            id_map,
            hierarchy: None,
            partition,
        })
    }

    pub fn with_hierarchy(mut self, hierarchy: LabelHierarchy) -> Self {
        self.hierarchy = Some(hierarchy);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_seen(&self) -> usize {
        self.split.num_seen()
    }

    pub fn num_classes(&self) -> usize {
        self.id_map.len()
    }

    pub fn is_seen(&self, dense: usize) -> bool {
        dense < self.num_seen()
    }

    /// Row indices carrying dense label `class`.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect()
    }

    /// Rows selected by `indices`, keeping split and id map.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split.clone(),
            id_map: self.id_map.clone(),
            hierarchy: self.hierarchy.clone(),
            partition: self.partition,
        }
    }

    /// Original class ids of every row.
    pub fn original_labels(&self) -> Vec<ClassId> {
        self.labels.iter().map(|&l| self.id_map.original(l)).collect()
    }
}

/// Per-class semantic vectors, rows addressed by original class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SemanticMatrix<T> {
    #[serde(with = "crate::report::zsfm_b64")]
    pub vectors: Array2<T>,
    pub class_ids: Vec<ClassId>,
    /// False when rows live in an unnormalized space (predicted exemplars);
    /// bandwidth grids are then rescaled by the median pairwise distance.
    pub normalized: bool,
}

impl<T: Scalar> SemanticMatrix<T> {
    pub fn new(vectors: Array2<T>, class_ids: Vec<ClassId>, normalized: bool) -> Result<Self> {
        if vectors.nrows() != class_ids.len() {
            return Err(ZslError::dim(format!(
                "{} semantic rows but {} class ids",
                vectors.nrows(),
                class_ids.len()
            )));
        }
        check_finite(vectors.view(), "semantic matrix")?;
        let mut seen = BTreeSet::new();
        for &id in &class_ids {
            if !seen.insert(id) {
                return Err(ZslError::data(format!("duplicate semantic class id {id}")));
            }
        }
        Ok(SemanticMatrix {
            vectors,
            class_ids,
            normalized,
        })
    }

    /// Unit-normalizes every row.
    pub fn normalized(vectors: Array2<T>, class_ids: Vec<ClassId>) -> Result<Self> {
        let vectors = l2_normalize_rows(vectors.view())?;
        Self::new(vectors, class_ids, true)
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn row_of(&self, id: ClassId) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == id)
    }

    /// Rows reordered to follow `ids`; errors if a class is missing.
    pub fn select_ids(&self, ids: &[ClassId]) -> Result<Self> {
        let rows = ids
            .iter()
            .map(|&id| {
                self.row_of(id)
                    .ok_or_else(|| ZslError::data(format!("no semantic vector for class {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SemanticMatrix {
            vectors: self.vectors.select(Axis(0), &rows),
            class_ids: ids.to_vec(),
            normalized: self.normalized,
        })
    }

    /// Rows in dense order of `id_map`.
    pub fn aligned(&self, id_map: &IdMap) -> Result<Self> {
        self.select_ids(id_map.originals())
    }
}

/// Scales each row to unit ℓ2 norm.
pub fn l2_normalize_rows<T: Scalar>(m: ArrayView2<T>) -> Result<Array2<T>> {
    let mut out = m.to_owned();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(ZslError::data(format!("cannot normalize zero row {i}")));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

pub(crate) fn check_finite<T: Scalar>(m: ArrayView2<T>, what: &str) -> Result<()> {
    for (i, row) in m.axis_iter(Axis(0)).enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ZslError::data(format!("non-finite value in {what} row {i}")));
        }
    }
    Ok(())
}

/// Per-class sample count entry of a [`SplitReport`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class_id: ClassId,
    pub seen: bool,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub partition: Partition,
    pub classes: Vec<ClassCount>,
    pub warnings: Vec<String>,
}

/// Counts samples per class and checks the partition is legal for its role.
pub fn validate_split<T: Scalar>(dataset: &Dataset<T>) -> Result<SplitReport> {
    dataset.split.check()?;
    let mut counts = vec![0usize; dataset.num_classes()];
    for &l in &dataset.labels {
        counts[l] += 1;
    }
    let s = dataset.num_seen();
    if dataset.partition == Partition::Train {
        if let Some(c) = (s..counts.len()).find(|&c| counts[c] > 0) {
            return Err(ZslError::data(format!(
                "unseen class {} has {} samples in a training partition",
                dataset.id_map.original(c),
                counts[c]
            )));
        }
    }
    let mut warnings = Vec::new();
    let classes = counts
        .iter()
        .enumerate()
        .map(|(c, &count)| {
            let seen = c < s;
            if seen && count == 0 && dataset.partition == Partition::Train {
                warnings.push(format!(
                    "seen class {} has no samples",
                    dataset.id_map.original(c)
                ));
            }
            ClassCount {
                class_id: dataset.id_map.original(c),
                seen,
                count,
            }
        })
        .collect();
    Ok(SplitReport {
        partition: dataset.partition,
        classes,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// File formats

/// Encodes a matrix as `ZSFM` + rows + cols (u32 LE) + row-major f32 LE payload.
pub fn encode_zsfm<T: Scalar>(m: ArrayView2<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * m.len());
    out.extend_from_slice(ZSFM_MAGIC);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.iter() {
        let f = v.to_f32().unwrap_or(f32::NAN);
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

pub fn decode_zsfm<T: Scalar>(bytes: &[u8]) -> Result<Array2<T>> {
    let ctx = "ZSFM block";
    if bytes.len() < 12 || &bytes[..4] != ZSFM_MAGIC {
        return Err(ZslError::parse(ctx, "missing ZSFM header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    let expected = rows * cols * 4;
    if payload.len() != expected {
        return Err(ZslError::parse(
            ctx,
            format!(
                "payload size mismatch: expected {expected} bytes for {rows}x{cols}, found {}",
                payload.len()
            ),
        ));
    }
    let values: Vec<T> = payload
        .chunks_exact(4)
        .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().unwrap())).unwrap())
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| ZslError::parse(ctx, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(ZslError::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| ZslError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|e| ZslError::parse(path.display().to_string(), e))
}

fn parse_csv_rows<T: Scalar>(text: &str, context: &str) -> Result<Vec<Vec<T>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| ZslError::parse(context, e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map(T::of)
                    .map_err(|e| ZslError::parse(context, format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn rows_to_matrix<T: Scalar>(rows: Vec<Vec<T>>, context: &str) -> Result<Array2<T>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(ZslError::parse(
            context,
            format!("row {i} has {} columns, expected {ncols}", rows[i].len()),
        ));
    }
    let nrows = rows.len();
    Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect())
        .map_err(|e| ZslError::parse(context, e))
}

/// Reads a feature matrix in either `ZSFM` binary or headerless CSV form.
pub fn read_feature_matrix<T: Scalar>(path: &Path) -> Result<Array2<T>> {
    let bytes = read_bytes(path)?;
    let ctx = path.display().to_string();
    let m = if bytes.starts_with(ZSFM_MAGIC) {
        decode_zsfm(&bytes).map_err(|e| match e {
            ZslError::Parse { message, .. } => ZslError::parse(ctx.clone(), message),
            other => other,
        })?
    } else {
        let text = String::from_utf8(bytes).map_err(|e| ZslError::parse(&ctx, e))?;
        rows_to_matrix(parse_csv_rows(&text, &ctx)?, &ctx)?
    };
    check_finite(m.view(), &ctx)?;
    Ok(m)
}

/// Writes a `ZSFM` file.
pub fn write_zsfm<T: Scalar>(path: &Path, m: ArrayView2<T>) -> Result<()> {
    crate::report::write_atomic(path, &encode_zsfm(m))
}

pub fn read_labels(path: &Path) -> Result<Vec<ClassId>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<ClassId>().map_err(|e| {
                ZslError::parse(path.display().to_string(), format!("line {}: {e}", i + 1))
            })
        })
        .collect()
}

pub fn read_split(path: &Path) -> Result<ClassSplit> {
    let text = read_text(path)?;
    let split: ClassSplit = serde_json::from_str(&text)
        .map_err(|e| ZslError::parse(path.display().to_string(), e))?;
    split.check()?;
    Ok(split)
}

pub fn read_hierarchy(path: &Path) -> Result<LabelHierarchy> {
    let text = read_text(path)?;
    let ctx = path.display().to_string();
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        if parts.len() != 2 {
            return Err(ZslError::parse(&ctx, format!("line {}: expected two ids", i + 1)));
        }
        let parse = |s: &str| {
            s.parse::<ClassId>()
                .map_err(|e| ZslError::parse(&ctx, format!("line {}: {e}", i + 1)))
        };
        edges.push((parse(parts[0])?, parse(parts[1])?));
    }
    LabelHierarchy::from_edges(edges)
}

/// Reads a semantic CSV (`id, v1, v2, ...`). When a class id occurs on
/// several rows (one row per image), rows are averaged per class first.
/// Rows are ℓ2-normalized after averaging.
pub fn read_semantic_matrix<T: Scalar>(path: &Path) -> Result<SemanticMatrix<T>> {
    let text = read_text(path)?;
    let ctx = path.display().to_string();
    let rows: Vec<Vec<f64>> = parse_csv_rows::<f64>(&text, &ctx)?;
    let mut order: Vec<ClassId> = Vec::new();
    let mut sums: HashMap<ClassId, (Vec<f64>, usize)> = HashMap::new();
    let mut width = None;
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() < 2 {
            return Err(ZslError::parse(&ctx, format!("row {i} has no values")));
        }
        if row[0].fract() != 0.0 {
            return Err(ZslError::parse(&ctx, format!("row {i}: class id must be an integer")));
        }
        let id = row[0] as ClassId;
        let values = &row[1..];
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(ZslError::parse(&ctx, format!("row {i} width mismatch")))
            }
            _ => {}
        }
        let entry = sums.entry(id).or_insert_with(|| {
            order.push(id);
            (vec![0.0; values.len()], 0)
        });
        for (s, v) in entry.0.iter_mut().zip(values) {
            *s += v;
        }
        entry.1 += 1;
    }
    let width = width.ok_or_else(|| ZslError::parse(&ctx, "empty semantic file"))?;
    let mut m = Array2::<T>::zeros((order.len(), width));
    for (r, id) in order.iter().enumerate() {
        let (sum, n) = &sums[id];
        for (c, s) in sum.iter().enumerate() {
            m[[r, c]] = T::of(s / *n as f64);
        }
    }
    check_finite(m.view(), &ctx)?;
    let vectors = l2_normalize_rows(m.view()).map_err(|e| match e {
        ZslError::Data(msg) => ZslError::data(format!("{ctx}: {msg}")),
        other => other,
    })?;
    SemanticMatrix::new(vectors, order, true)
}

/// Paths of one labeled partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub features: PathBuf,
    pub labels: PathBuf,
    pub split: PathBuf,
    #[serde(default)]
    pub hierarchy: Option<PathBuf>,
}

/// Loads features, labels, split and optional hierarchy into a [`Dataset`].
pub fn load_dataset<T: Scalar>(paths: &DatasetPaths, partition: Partition) -> Result<Dataset<T>> {
    let features = read_feature_matrix::<T>(&paths.features)?;
    let labels = read_labels(&paths.labels)?;
    let split = read_split(&paths.split)?;
    let mut ds = Dataset::new(features, &labels, split, partition)?;
    if let Some(h) = &paths.hierarchy {
        ds.hierarchy = Some(read_hierarchy(h)?);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalize_three_four_five() {
        let out = l2_normalize_rows(array![[3.0, 4.0]].view()).unwrap();
        assert!((out[[0, 0]] - 0.6f64).abs() < 1e-12);
        assert!((out[[0, 1]] - 0.8f64).abs() < 1e-12);
    }

    #[test]
    fn normalize_zero_row_names_index() {
        let err = l2_normalize_rows(array![[1.0, 0.0], [0.0, 0.0]].view()).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn normalize_two_rows() {
        let out = l2_normalize_rows(array![[1.0, 1.0], [2.0, 0.0]].view()).unwrap();
        let h = 0.5f64.sqrt();
        assert!((out[[0, 0]] - h).abs() < 1e-12 && (out[[0, 1]] - h).abs() < 1e-12);
        assert_eq!(out.row(1).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn zsfm_payload_mismatch() {
        let mut bytes = b"ZSFM".to_vec();
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 40]);
        let err = decode_zsfm::<f64>(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("payload size mismatch"), "{msg}");
        assert!(msg.contains("48"), "{msg}");
    }

    #[test]
    fn label_outside_split() {
        let split = ClassSplit::new(vec![0], vec![1]).unwrap();
        let err = Dataset::new(array![[1.0f64], [2.0]], &[0, 5], split, Partition::Train)
            .unwrap_err();
        assert!(err.to_string().contains("label 5 outside split"));
    }

    #[test]
    fn non_finite_rejected() {
        let split = ClassSplit::new(vec![0], vec![]).unwrap();
        let err = Dataset::new(array![[f64::NAN]], &[0], split, Partition::Train).unwrap_err();
        assert!(matches!(err, ZslError::Data(_)));
    }

    #[test]
    fn overlapping_split_rejected() {
        let err = ClassSplit::new(vec![1, 3], vec![3]).unwrap_err();
        assert!(err.to_string().contains("class 3"));
    }

    #[test]
    fn split_report_counts_and_warnings() {
        let split = ClassSplit::new(vec![10, 20], vec![30]).unwrap();
        let ds = Dataset::new(array![[1.0f64], [2.0]], &[10, 10], split, Partition::Train)
            .unwrap();
        let report = validate_split(&ds).unwrap();
        assert_eq!(report.classes[0].count, 2);
        assert_eq!(report.classes[1].count, 0);
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].contains("20"));
    }

    #[test]
    fn unseen_in_training_partition_fails() {
        let split = ClassSplit::new(vec![0], vec![1]).unwrap();
        let ds = Dataset::new(array![[1.0f64], [2.0]], &[0, 1], split.clone(), Partition::Train)
            .unwrap();
        assert!(validate_split(&ds).is_err());
        let ds = Dataset::new(array![[1.0f64], [2.0]], &[0, 1], split, Partition::Test).unwrap();
        assert!(validate_split(&ds).is_ok());
    }

    #[test]
    fn id_map_is_bijective() {
        let split = ClassSplit::new(vec![7, 3], vec![42, -1]).unwrap();
        let map = IdMap::from_split(&split);
        for d in 0..map.len() {
            assert_eq!(map.dense(map.original(d)), Some(d));
        }
        assert_eq!(map.dense(3), Some(1));
        assert_eq!(map.dense(-1), Some(3));
    }

    #[test]
    fn hierarchy_rejects_self_loop() {
        assert!(LabelHierarchy::from_edges(vec![(1, 1)]).is_err());
        let h = LabelHierarchy::from_edges(vec![(1, 2), (2, 3)]).unwrap();
        assert!(h.is_connected());
        assert_eq!(h.hop_distances(1)[&3], 2);
    }
}
