//! Experiment configuration: one JSON document per run. Relative paths are
//! resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zsl_core::data::{load_dataset, read_semantic_matrix, DatasetPaths, Partition};
use zsl_core::pipeline::{check_hypers, Hypers, Method, TrainInput};
use zsl_core::{DatasetF64, SemanticMatrixF64, ZslError};

pub type Grid = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainTest {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub features: TrainTest,
    pub labels: TrainTest,
    pub attributes: PathBuf,
    /// A second semantic type, concatenated with the first for exemplar regression.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary_attributes: Option<PathBuf>,
    pub split: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    /// Appended to `name` when given, so `{name: "sync", variant: "cs"}` is `sync-cs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(default)]
    pub hypers: Hypers,
    #[serde(default)]
    pub grid: Grid,
    /// Further grid stages, each searched from the previous winner.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<Grid>,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            name: "exem-1nn".into(),
            variant: None,
            hypers: Hypers::new(),
            grid: Grid::new(),
            stages: Vec::new(),
        }
    }
}

impl MethodConfig {
    pub fn full_name(&self) -> String {
        match &self.variant {
            Some(v) if !self.name.ends_with(&format!("-{v}")) => format!("{}-{v}", self.name),
            _ => self.name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: Vec<String>,
    pub k_values: Vec<usize>,
    /// Calibration factor for the GZSL harmonic mean, typically the γ* of a cv run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Extra γ values at which eval-gzsl reports calibrated accuracies.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gammas: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: vec!["per-class-accuracy".into()],
            k_values: vec![1],
            gamma: None,
            gammas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            objective: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ZslError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ZslError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Config = serde_json::from_str(&text)
            .map_err(|e| ZslError::Config(format!("config {}: {e}", path.display())))?;
        check_hypers(&cfg.method.hypers)?;
        for grid in std::iter::once(&cfg.method.grid).chain(&cfg.method.stages) {
            check_hypers(&grid.keys().map(|k| (k.clone(), 0.0)).collect())?;
        }
        Method::parse(&cfg.method.full_name())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.resolve(base);
        Ok(cfg)
    }
}

impl DataConfig {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.features.train);
        fix(&mut self.features.test);
        fix(&mut self.labels.train);
        fix(&mut self.labels.test);
        fix(&mut self.attributes);
        fix(&mut self.split);
        self.secondary_attributes.iter_mut().for_each(fix);
        self.hierarchy.iter_mut().for_each(fix);
    }
}

/// Everything a command reads from disk.
pub struct Loaded {
    pub train: DatasetF64,
    pub test: DatasetF64,
    pub semantics: SemanticMatrixF64,
    pub secondary: Option<SemanticMatrixF64>,
}

impl Loaded {
    pub fn read(data: &DataConfig) -> Result<Self, ZslError> {
        let paths = |features: &Path, labels: &Path| DatasetPaths {
            features: features.to_path_buf(),
            labels: labels.to_path_buf(),
            split: data.split.clone(),
            hierarchy: data.hierarchy.clone(),
        };
        let train = load_dataset(&paths(&data.features.train, &data.labels.train), Partition::Train)?;
        let test = load_dataset(&paths(&data.features.test, &data.labels.test), Partition::Test)?;
        let semantics = read_semantic_matrix(&data.attributes)?;
        let secondary = data.secondary_attributes.as_deref().map(read_semantic_matrix).transpose()?;
        Ok(Loaded {
            train,
            test,
            semantics,
            secondary,
        })
    }

    pub fn input(&self) -> TrainInput<'_, f64> {
        TrainInput {
            train: &self.train,
            semantics: &self.semantics,
            secondary: self.secondary.as_ref(),
        }
    }
}
