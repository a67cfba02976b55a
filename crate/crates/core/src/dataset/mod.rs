//! Stratified train/validation/test splits, SMOTE balancing and dataset export.

mod export;
mod smote;
mod split;

use std::path::PathBuf;

use crate::labeling::CoarseLabel;

pub use export::{export_dataset, ExportManifest, ExportRecord};
pub use smote::{smote_oversample, LabeledVector, DEFAULT_SMOTE_K};
pub use split::{shuffle_split, ClassQuota, DatasetSplits, LabeledId, SplitSpec};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("class {class} has {available} documents but {requested} are requested for validation and test")]
    ClassTooSmall {
        class: CoarseLabel,
        available: usize,
        requested: usize,
    },
    #[error("document {0} appears more than once in the population")]
    DuplicateId(String),
    #[error("SMOTE needs k >= 1")]
    InvalidK,
    #[error("SMOTE needs at least one training vector")]
    EmptyTraining,
    #[error("split refers to unknown document {0}")]
    UnknownDocument(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
