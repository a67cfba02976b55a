//! Weak-supervision labeling of long-form posts into depression-severity
//! classes, plus the classical baselines trained on the fused labels.
//!
//! Data flows through the modules in order:
//!
//! ```text
//! corpus -> bdi_lexicon -> labeling -> dataset -> features -> models -> evaluation
//! ```
//!
//! [`corpus`] normalizes raw posts, [`bdi_lexicon`] scores them against a
//! keyword lexicon derived from the 21-item questionnaire, [`labeling`] fuses
//! keyword, zero-shot and expert votes, [`dataset`] splits and balances,
//! [`features`] fits TF-IDF, [`models`] holds the four from-scratch
//! classifiers and [`evaluation`] computes and renders metrics.

pub mod bdi_lexicon;
pub mod corpus;
pub mod dataset;
pub mod evaluation;
pub mod features;
pub mod labeling;
pub mod models;

pub use bdi_lexicon::{BdiLexicon, BdiScore, SeverityBands, SeverityLabel};
pub use corpus::{CleanDocument, RawPost, StopList};
pub use features::{SparseVector, TfidfModel};
pub use labeling::{CoarseLabel, FusedLabel, LabelVote};
