//! Expert annotations: last-write-wins per document, with full history kept.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{LabelVote, LabelingError};
use crate::bdi_lexicon::SeverityLabel;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpertAnnotation {
    pub doc_id: String,
    pub annotator_id: String,
    pub label: SeverityLabel,
    pub submitted_at: i64,
}

impl ExpertAnnotation {
    /// Builds an annotation from an unvalidated label name.
    pub fn parse(
        doc_id: impl Into<String>,
        annotator_id: impl Into<String>,
        label: &str,
        submitted_at: i64,
    ) -> Result<Self, LabelingError> {
        Ok(Self {
            doc_id: doc_id.into(),
            annotator_id: annotator_id.into(),
            label: label.parse()?,
            submitted_at,
        })
    }

    pub fn to_vote(&self) -> LabelVote {
        LabelVote::expert(self.doc_id.clone(), self.label, self.submitted_at)
    }

    /// Later submissions win; equal timestamps fall back to arrival order.
    fn supersedes(&self, seq: u64, other: &Self, other_seq: u64) -> bool {
        (self.submitted_at, seq) > (other.submitted_at, other_seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acknowledgment {
    pub doc_id: String,
    pub sequence: u64,
    pub effective_label: SeverityLabel,
    /// True when an identical annotation had already been recorded.
    pub duplicate: bool,
}

pub trait AnnotationStore {
    fn has_document(&self, doc_id: &str) -> bool;

    /// Persists an annotation and returns its sequence number.
    fn append(&mut self, annotation: ExpertAnnotation) -> Result<u64, LabelingError>;

    fn history(&self, doc_id: &str) -> Vec<(u64, ExpertAnnotation)>;

    fn effective(&self, doc_id: &str) -> Option<ExpertAnnotation> {
        effective_of(&self.history(doc_id))
    }
}

fn effective_of(history: &[(u64, ExpertAnnotation)]) -> Option<ExpertAnnotation> {
    let mut best: Option<&(u64, ExpertAnnotation)> = None;
    for entry in history {
        match best {
            Some((seq, cur)) if !entry.1.supersedes(entry.0, cur, *seq) => {}
            _ => best = Some(entry),
        }
    }
    best.map(|(_, a)| a.clone())
}

/// Validates and records an annotation. Resubmitting an annotation that is
/// identical in every field is acknowledged without a second write.
pub fn record_expert_label<S: AnnotationStore + ?Sized>(
    annotation: ExpertAnnotation,
    store: &mut S,
) -> Result<Acknowledgment, LabelingError> {
    if !store.has_document(&annotation.doc_id) {
        return Err(LabelingError::UnknownDocument(annotation.doc_id));
    }
    let doc_id = annotation.doc_id.clone();
    let history = store.history(&doc_id);
    let (sequence, duplicate) = match history.iter().find(|(_, a)| *a == annotation) {
        Some((seq, _)) => (*seq, true),
        None => (store.append(annotation)?, false),
    };
    let effective_label = store
        .effective(&doc_id)
        .map(|a| a.label)
        .ok_or_else(|| LabelingError::Store(format!("annotation for {doc_id} not visible")))?;
    Ok(Acknowledgment {
        doc_id,
        sequence,
        effective_label,
        duplicate,
    })
}

/// Volatile store; also the in-memory state behind durable stores.
#[derive(Debug, Clone, Default)]
pub struct MemoryAnnotationStore {
    documents: BTreeSet<String>,
    history: BTreeMap<String, Vec<(u64, ExpertAnnotation)>>,
    next_seq: u64,
}

impl MemoryAnnotationStore {
    pub fn new<I, S>(documents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            documents: documents.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    /// Applies an already-sequenced annotation, as during log replay.
    pub fn apply(&mut self, seq: u64, annotation: ExpertAnnotation) {
        self.next_seq = self.next_seq.max(seq + 1);
        self.history
            .entry(annotation.doc_id.clone())
            .or_default()
            .push((seq, annotation));
    }

    pub fn next_sequence(&self) -> u64 {
        self.next_seq
    }

    pub fn document_count(&self) -> usize {
        self.documents.len()
    }

    pub fn documents(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(String::as_str)
    }

    /// Number of documents with at least one annotation.
    pub fn labeled_count(&self) -> usize {
        self.history.len()
    }

    /// Effective annotation per labeled document, ordered by doc id.
    pub fn effective_all(&self) -> Vec<ExpertAnnotation> {
        self.history
            .values()
            .filter_map(|h| effective_of(h))
            .collect()
    }

    /// Every recorded annotation in sequence order.
    pub fn all_history(&self) -> Vec<(u64, ExpertAnnotation)> {
        let mut all: Vec<_> = self.history.values().flatten().cloned().collect();
        all.sort_by_key(|(seq, _)| *seq);
        all
    }
}

impl AnnotationStore for MemoryAnnotationStore {
    fn has_document(&self, doc_id: &str) -> bool {
        self.documents.contains(doc_id)
    }

    fn append(&mut self, annotation: ExpertAnnotation) -> Result<u64, LabelingError> {
        let seq = self.next_seq;
        self.apply(seq, annotation);
        Ok(seq)
    }

    fn history(&self, doc_id: &str) -> Vec<(u64, ExpertAnnotation)> {
        self.history.get(doc_id).cloned().unwrap_or_default()
    }
}

#[derive(Deserialize)]
struct CsvRow {
    doc_id: String,
    annotator_id: String,
    label: String,
    submitted_at: i64,
}

/// Reads `doc_id,annotator_id,label,submitted_at` rows (with header).
pub fn read_expert_labels<R: Read>(input: R) -> Result<Vec<ExpertAnnotation>, LabelingError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    for (n, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| LabelingError::Csv(e.to_string()))?;
        let annotation =
            ExpertAnnotation::parse(row.doc_id, row.annotator_id, &row.label, row.submitted_at)
                .map_err(|e| LabelingError::Csv(format!("row {}: {e}", n + 2)))?;
        out.push(annotation);
    }
    Ok(out)
}

pub fn write_expert_labels<W: Write>(
    output: W,
    annotations: &[ExpertAnnotation],
) -> Result<(), LabelingError> {
    let mut writer = csv::Writer::from_writer(output);
    let csv_err = |e: csv::Error| LabelingError::Csv(e.to_string());
    writer
        .write_record(["doc_id", "annotator_id", "label", "submitted_at"])
        .map_err(csv_err)?;
    for a in annotations {
        writer
            .write_record([
                a.doc_id.as_str(),
                a.annotator_id.as_str(),
                a.label.as_str(),
                &a.submitted_at.to_string(),
            ])
            .map_err(csv_err)?;
    }
    writer
        .flush()
        .map_err(|e| LabelingError::Csv(e.to_string()))
}
