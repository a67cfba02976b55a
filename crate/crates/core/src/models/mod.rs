//! The four baseline classifiers over sparse TF-IDF vectors.
//!
//! Every trainer is a pure function of its inputs and the seed in the
//! [`ModelSpec`]; parallel paths derive one generator stream per unit of work
//! (tree or class) so they match a sequential run exactly.

mod boosting;
mod forest;
mod naive_bayes;
mod svm;
mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::features::SparseVector;
use crate::labeling::CoarseLabel;

pub use boosting::{train_gradient_boosting, GradientBoostingModel};
pub use forest::{train_random_forest, RandomForestModel};
pub use naive_bayes::{train_naive_bayes, NaiveBayesModel};
pub use svm::{train_linear_svm, LinearSvmModel};
pub use tree::{Node, Tree};

/// Version written into model files; readers reject anything newer.
pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "depsev-model";
const END_MARKER: &str = "end";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown hyperparameter {name:?} for {kind}; expected one of {allowed:?}")]
    UnknownHyperparameter {
        kind: ModelKind,
        name: String,
        allowed: Vec<&'static str>,
    },
    #[error("invalid value {value} for {name}: {reason}")]
    InvalidHyperparameter {
        name: String,
        value: f64,
        reason: &'static str,
    },
    #[error("unknown model kind {0:?}")]
    UnknownKind(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt model file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("model file {path} has format version {found}; this build reads up to {supported}")]
    Version {
        path: PathBuf,
        found: u64,
        supported: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    NaiveBayes,
    RandomForest,
    LinearSvm,
    GradientBoosting,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::NaiveBayes,
        ModelKind::RandomForest,
        ModelKind::LinearSvm,
        ModelKind::GradientBoosting,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::NaiveBayes => "naive_bayes",
            ModelKind::RandomForest => "random_forest",
            ModelKind::LinearSvm => "linear_svm",
            ModelKind::GradientBoosting => "gradient_boosting",
        }
    }

    /// Short column heading used in rendered reports.
    pub fn abbreviation(self) -> &'static str {
        match self {
            ModelKind::NaiveBayes => "NB",
            ModelKind::RandomForest => "RF",
            ModelKind::LinearSvm => "SVM",
            ModelKind::GradientBoosting => "GB",
        }
    }

    /// Recognized hyperparameters and their defaults.
    pub fn defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            ModelKind::NaiveBayes => &[("alpha", 1.0)],
            ModelKind::RandomForest => &[("n_trees", 100.0), ("min_samples_split", 2.0)],
            ModelKind::LinearSvm => &[("lambda", 1e-4), ("epochs", 50.0)],
            ModelKind::GradientBoosting => &[
                ("stages", 100.0),
                ("max_depth", 2.0),
                ("learning_rate", 0.1),
            ],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.abbreviation().eq_ignore_ascii_case(&s))
            .ok_or(ModelError::UnknownKind(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawSpec {
    kind: ModelKind,
    #[serde(default)]
    hyperparameters: BTreeMap<String, f64>,
    #[serde(default)]
    seed: u64,
}

/// Model kind, hyperparameters and seed. Hyperparameters left unset take
/// the defaults from [`ModelKind::defaults`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ModelSpec {
    kind: ModelKind,
    hyperparameters: BTreeMap<String, f64>,
    seed: u64,
}

impl ModelSpec {
    pub fn new(
        kind: ModelKind,
        hyperparameters: BTreeMap<String, f64>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let allowed: Vec<&'static str> = kind.defaults().iter().map(|(n, _)| *n).collect();
        for (name, &value) in &hyperparameters {
            if !allowed.contains(&name.as_str()) {
                return Err(ModelError::UnknownHyperparameter {
                    kind,
                    name: name.clone(),
                    allowed,
                });
            }
            check_value(name, value)?;
        }
        let mut resolved = hyperparameters;
        for (name, default) in kind.defaults() {
            resolved.entry(name.to_string()).or_insert(*default);
        }
        Ok(Self {
            kind,
            hyperparameters: resolved,
            seed,
        })
    }

    pub fn with_defaults(kind: ModelKind, seed: u64) -> Self {
        Self::new(kind, BTreeMap::new(), seed).expect("defaults are valid")
    }

    /// Returns a copy with one hyperparameter set.
    pub fn with(mut self, name: &str, value: f64) -> Result<Self, ModelError> {
        self.hyperparameters.insert(name.to_string(), value);
        Self::new(self.kind, self.hyperparameters, self.seed)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, name: &str) -> f64 {
        *self
            .hyperparameters
            .get(name)
            .unwrap_or_else(|| panic!("{name} is not a {} hyperparameter", self.kind))
    }

    fn get_count(&self, name: &str) -> usize {
        self.get(name) as usize
    }

    /// Every hyperparameter, defaults included.
    pub fn resolved(&self) -> &BTreeMap<String, f64> {
        &self.hyperparameters
    }
}

impl TryFrom<RawSpec> for ModelSpec {
    type Error = ModelError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        Self::new(raw.kind, raw.hyperparameters, raw.seed)
    }
}

impl From<ModelSpec> for RawSpec {
    fn from(s: ModelSpec) -> Self {
        RawSpec {
            kind: s.kind,
            hyperparameters: s.hyperparameters,
            seed: s.seed,
        }
    }
}

fn check_value(name: &str, value: f64) -> Result<(), ModelError> {
    let invalid = |reason| {
        Err(ModelError::InvalidHyperparameter {
            name: name.to_string(),
            value,
            reason,
        })
    };
    if !value.is_finite() {
        return invalid("must be finite");
    }
    let integral = value.fract() == 0.0;
    match name {
        "alpha" | "lambda" | "learning_rate" if value <= 0.0 => invalid("must be positive"),
        "n_trees" | "max_depth" if !integral || value < 1.0 => invalid("must be an integer >= 1"),
        "min_samples_split" if !integral || value < 2.0 => invalid("must be an integer >= 2"),
        "epochs" | "stages" if !integral || value < 0.0 => invalid("must be an integer >= 0"),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    NaiveBayes(NaiveBayesModel),
    RandomForest(RandomForestModel),
    LinearSvm(LinearSvmModel),
    GradientBoosting(GradientBoostingModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub classes: Vec<CoarseLabel>,
    pub n_features: usize,
    pub params: ModelParams,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn predict(&self, x: &SparseVector) -> CoarseLabel {
        let i = match &self.params {
            ModelParams::NaiveBayes(m) => m.predict_index(x),
            ModelParams::RandomForest(m) => m.predict_index(x, self.classes.len()),
            ModelParams::LinearSvm(m) => m.predict_index(x),
            ModelParams::GradientBoosting(m) => m.predict_index(x),
        };
        self.classes[i]
    }

    pub fn predict_batch(&self, xs: &[SparseVector]) -> Vec<CoarseLabel> {
        use rayon::prelude::*;
        xs.par_iter().map(|x| self.predict(x)).collect()
    }

    /// Class posteriors, only for naive Bayes.
    pub fn posterior(&self, x: &SparseVector) -> Option<Vec<f64>> {
        match &self.params {
            ModelParams::NaiveBayes(m) => Some(m.posterior(x)),
            _ => None,
        }
    }
}

/// Trains the model named by `spec.kind()`.
pub fn train(
    x: &[SparseVector],
    y: &[CoarseLabel],
    n_features: usize,
    spec: &ModelSpec,
) -> Result<TrainedModel, ModelError> {
    match spec.kind {
        ModelKind::NaiveBayes => train_naive_bayes(x, y, n_features, spec),
        ModelKind::RandomForest => train_random_forest(x, y, n_features, spec),
        ModelKind::LinearSvm => train_linear_svm(x, y, n_features, spec),
        ModelKind::GradientBoosting => train_gradient_boosting(x, y, n_features, spec),
    }
}

/// Validates training inputs and maps labels to positions in the sorted
/// class list.
fn prepare(
    x: &[SparseVector],
    y: &[CoarseLabel],
    n_features: usize,
) -> Result<(Vec<CoarseLabel>, Vec<usize>), ModelError> {
    if x.len() != y.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "{} vectors but {} labels",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(ModelError::DimensionMismatch("no training examples".into()));
    }
    if let Some((row, max)) = x
        .iter()
        .enumerate()
        .filter_map(|(r, v)| v.max_index().map(|m| (r, m)))
        .find(|(_, m)| *m as usize >= n_features)
    {
        return Err(ModelError::DimensionMismatch(format!(
            "vector {row} has index {max} but the feature space has {n_features} dimensions"
        )));
    }
    let mut classes: Vec<CoarseLabel> = y.to_vec();
    classes.sort();
    classes.dedup();
    let targets = y
        .iter()
        .map(|l| classes.binary_search(l).expect("label is in class list"))
        .collect();
    Ok((classes, targets))
}

/// Index of the largest score; ties go to the later (more severe) class.
fn argmax_last(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s >= scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: ModelKind,
    classes: Vec<CoarseLabel>,
    n_features: usize,
    hyperparameters: BTreeMap<String, f64>,
    seed: u64,
}

/// Writes a three-line text file: a JSON header, the JSON parameters and an
/// end marker. A missing marker means the file was cut short.
pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    let header = Header {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_FORMAT_VERSION,
        kind: model.kind(),
        classes: model.classes.clone(),
        n_features: model.n_features,
        hyperparameters: model.spec.resolved().clone(),
        seed: model.spec.seed,
    };
    let io_err = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    let mut write = || -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        serde_json::to_writer(&mut out, &model.params)?;
        writeln!(out, "\n{END_MARKER}")?;
        out.flush()
    };
    write().map_err(io_err)
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let corrupt = |reason: String| ModelError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    let header_line = lines.next().ok_or_else(|| corrupt("empty file".into()))?;
    let raw: serde_json::Value =
        serde_json::from_str(header_line).map_err(|e| corrupt(format!("header: {e}")))?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
        return Err(corrupt("not a model file".into()));
    }
    let found = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("header lacks a version".into()))?;
    if found > MODEL_FORMAT_VERSION as u64 || found == 0 {
        return Err(ModelError::Version {
            path: path.to_path_buf(),
            found,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(raw).map_err(|e| corrupt(format!("header: {e}")))?;
    let body = lines
        .next()
        .ok_or_else(|| corrupt("missing parameters".into()))?;
    if lines.next() != Some(END_MARKER) || lines.next().is_some() {
        return Err(corrupt("truncated or trailing data".into()));
    }
    let params: ModelParams =
        serde_json::from_str(body).map_err(|e| corrupt(format!("parameters: {e}")))?;
    let spec = ModelSpec::new(header.kind, header.hyperparameters, header.seed)
        .map_err(|e| corrupt(e.to_string()))?;
    let model = TrainedModel {
        spec,
        classes: header.classes,
        n_features: header.n_features,
        params,
    };
    check_consistency(&model).map_err(corrupt)?;
    Ok(model)
}

fn check_consistency(model: &TrainedModel) -> Result<(), String> {
    let kind_matches = matches!(
        (&model.params, model.kind()),
        (ModelParams::NaiveBayes(_), ModelKind::NaiveBayes)
            | (ModelParams::RandomForest(_), ModelKind::RandomForest)
            | (ModelParams::LinearSvm(_), ModelKind::LinearSvm)
            | (
                ModelParams::GradientBoosting(_),
                ModelKind::GradientBoosting
            )
    );
    if !kind_matches {
        return Err("header kind does not match parameters".into());
    }
    if model.classes.is_empty() || model.classes.windows(2).any(|w| w[0] >= w[1]) {
        return Err("class list must be non-empty and strictly ordered".into());
    }
    let c = model.classes.len();
    let ok = match &model.params {
        ModelParams::NaiveBayes(m) => m.check_shape(c, model.n_features),
        ModelParams::RandomForest(m) => m.check_shape(c),
        ModelParams::LinearSvm(m) => m.check_shape(c, model.n_features),
        ModelParams::GradientBoosting(m) => m.check_shape(c),
    };
    if ok {
        Ok(())
    } else {
        Err("parameter shapes do not match the header".into())
    }
}
