//! TF-IDF features over clean documents, and the sparse vectors they live in.

mod sparse;
mod tfidf;

pub use sparse::{distance, lerp, squared_distance, SparseVector};
pub use tfidf::{fit_tfidf, transform, TfidfModel};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("cannot fit TF-IDF: no non-empty documents")]
    EmptyCorpus,
    #[error("invalid sparse vector: {0}")]
    InvalidVector(String),
    #[error("TF-IDF model line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
