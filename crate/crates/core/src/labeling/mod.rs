//! Label votes from the three labelers and their fusion into one label.
//!
//! Fusion is a weighted vote over (keyword, zero-shot, expert). With the
//! default unit weights it reduces to: unanimous agreement wins, otherwise a
//! two-vote majority wins, otherwise the expert decides.

mod expert;
mod zeroshot;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bdi_lexicon::{
    map_score_to_band, score_text, BdiLexicon, LexiconError, ParseLabelError, SeverityBands,
    SeverityLabel,
};
use crate::corpus::CleanDocument;

pub use expert::{
    read_expert_labels, record_expert_label, write_expert_labels, Acknowledgment, AnnotationStore,
    ExpertAnnotation, MemoryAnnotationStore,
};
pub use zeroshot::{
    interpret_response, zeroshot_label, HttpZeroShotClient, RetryPolicy, ZeroShotClassifier,
    ZeroShotRequest, ZeroShotResponse,
};

/// Relative tolerance used when comparing summed vote weights.
const WEIGHT_TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum LabelingError {
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    InvalidLabel(#[from] ParseLabelError),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("votes refer to different documents: {0:?}")]
    MismatchedDocIds(Vec<String>),
    #[error("two votes come from the {0} labeler")]
    DuplicateSource(VoteSource),
    #[error("vote {position} should come from the {expected} labeler, found {found}")]
    UnexpectedSource {
        position: usize,
        expected: VoteSource,
        found: VoteSource,
    },
    #[error("invalid fusion weights: {0}")]
    InvalidWeights(String),
    #[error("invalid vote: {0}")]
    InvalidVote(String),
    #[error("invalid candidate label set: {0}")]
    InvalidLabelSet(String),
    #[error("zero-shot service unreachable after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("zero-shot service returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed zero-shot response: {0}")]
    MalformedResponse(String),
    #[error("zero-shot labels do not match the candidate set (unexpected: {unexpected:?}, missing: {missing:?})")]
    LabelMismatch {
        unexpected: Vec<String>,
        missing: Vec<String>,
    },
    #[error("expert label file: {0}")]
    Csv(String),
    #[error("annotation store: {0}")]
    Store(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteSource {
    Keyword,
    Zeroshot,
    Expert,
}

impl VoteSource {
    pub const ALL: [VoteSource; 3] = [
        VoteSource::Keyword,
        VoteSource::Zeroshot,
        VoteSource::Expert,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VoteSource::Keyword => "keyword",
            VoteSource::Zeroshot => "zeroshot",
            VoteSource::Expert => "expert",
        }
    }
}

impl fmt::Display for VoteSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeler's verdict on one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVote {
    pub doc_id: String,
    pub source: VoteSource,
    pub label: SeverityLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub created_at: i64,
}

impl LabelVote {
    pub fn keyword(doc_id: impl Into<String>, label: SeverityLabel, created_at: i64) -> Self {
        Self {
            doc_id: doc_id.into(),
            source: VoteSource::Keyword,
            label,
            confidence: None,
            created_at,
        }
    }

    pub fn zeroshot(
        doc_id: impl Into<String>,
        label: SeverityLabel,
        confidence: f64,
        created_at: i64,
    ) -> Result<Self, LabelingError> {
        let vote = Self {
            doc_id: doc_id.into(),
            source: VoteSource::Zeroshot,
            label,
            confidence: Some(confidence),
            created_at,
        };
        vote.validate()?;
        Ok(vote)
    }

    pub fn expert(doc_id: impl Into<String>, label: SeverityLabel, created_at: i64) -> Self {
        Self {
            doc_id: doc_id.into(),
            source: VoteSource::Expert,
            label,
            confidence: None,
            created_at,
        }
    }

    /// Confidence is carried by zero-shot votes only, and lies in [0, 1].
    pub fn validate(&self) -> Result<(), LabelingError> {
        match (self.source, self.confidence) {
            (VoteSource::Zeroshot, Some(c)) if (0.0..=1.0).contains(&c) => Ok(()),
            (VoteSource::Zeroshot, Some(c)) => Err(LabelingError::InvalidVote(format!(
                "confidence {c} outside [0, 1] for {}",
                self.doc_id
            ))),
            (VoteSource::Zeroshot, None) => Err(LabelingError::InvalidVote(format!(
                "zero-shot vote for {} lacks a confidence",
                self.doc_id
            ))),
            (source, Some(_)) => Err(LabelingError::InvalidVote(format!(
                "{source} vote for {} carries a confidence",
                self.doc_id
            ))),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    Unanimous,
    Majority,
    ExpertFallback,
}

impl Agreement {
    pub fn as_str(self) -> &'static str {
        match self {
            Agreement::Unanimous => "unanimous",
            Agreement::Majority => "majority",
            Agreement::ExpertFallback => "expert_fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedLabel {
    pub doc_id: String,
    pub label: SeverityLabel,
    pub agreement: Agreement,
    /// Keyword, zero-shot and expert votes, in that order.
    pub votes: [LabelVote; 3],
}

/// The four classes that remain after rare classes are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseLabel {
    Normal,
    Mild,
    Moderate,
    Severe,
}

impl CoarseLabel {
    pub const ALL: [CoarseLabel; 4] = [
        CoarseLabel::Normal,
        CoarseLabel::Mild,
        CoarseLabel::Moderate,
        CoarseLabel::Severe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CoarseLabel::Normal => "normal",
            CoarseLabel::Mild => "mild",
            CoarseLabel::Moderate => "moderate",
            CoarseLabel::Severe => "severe",
        }
    }

    /// Display name as used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            CoarseLabel::Normal => "Normal",
            CoarseLabel::Mild => "Mild",
            CoarseLabel::Moderate => "Moderate",
            CoarseLabel::Severe => "Severe",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// The fine label with the same name.
    pub fn lift(self) -> SeverityLabel {
        match self {
            CoarseLabel::Normal => SeverityLabel::Normal,
            CoarseLabel::Mild => SeverityLabel::Mild,
            CoarseLabel::Moderate => SeverityLabel::Moderate,
            CoarseLabel::Severe => SeverityLabel::Severe,
        }
    }
}

impl fmt::Display for CoarseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoarseLabel {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim();
        CoarseLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| ParseLabelError {
                given: s.to_string(),
                allowed: CoarseLabel::ALL.iter().map(|l| l.as_str()).collect(),
            })
    }
}

/// Total map from the six fine labels onto the four coarse ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    try_from = "BTreeMap<SeverityLabel, CoarseLabel>",
    into = "BTreeMap<SeverityLabel, CoarseLabel>"
)]
pub struct MergeMap {
    targets: [CoarseLabel; 6],
}

impl Default for MergeMap {
    /// Borderline folds into mild and extreme into severe.
    fn default() -> Self {
        Self {
            targets: [
                CoarseLabel::Normal,
                CoarseLabel::Mild,
                CoarseLabel::Mild,
                CoarseLabel::Moderate,
                CoarseLabel::Severe,
                CoarseLabel::Severe,
            ],
        }
    }
}

impl MergeMap {
    pub fn get(&self, label: SeverityLabel) -> CoarseLabel {
        self.targets[label.index()]
    }
}

impl TryFrom<BTreeMap<SeverityLabel, CoarseLabel>> for MergeMap {
    type Error = String;

    fn try_from(map: BTreeMap<SeverityLabel, CoarseLabel>) -> Result<Self, Self::Error> {
        let mut targets = [CoarseLabel::Normal; 6];
        for label in SeverityLabel::ALL {
            targets[label.index()] = *map
                .get(&label)
                .ok_or_else(|| format!("merge map has no target for {label}"))?;
        }
        Ok(Self { targets })
    }
}

impl From<MergeMap> for BTreeMap<SeverityLabel, CoarseLabel> {
    fn from(m: MergeMap) -> Self {
        SeverityLabel::ALL
            .into_iter()
            .map(|l| (l, m.get(l)))
            .collect()
    }
}

pub fn merge_rare(label: SeverityLabel, merge: &MergeMap) -> CoarseLabel {
    merge.get(label)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub keyword: f64,
    pub zeroshot: f64,
    pub expert: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            keyword: 1.0,
            zeroshot: 1.0,
            expert: 1.0,
        }
    }
}

impl FusionWeights {
    pub fn new(keyword: f64, zeroshot: f64, expert: f64) -> Result<Self, LabelingError> {
        let w = Self {
            keyword,
            zeroshot,
            expert,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), LabelingError> {
        for (name, v) in [
            ("keyword", self.keyword),
            ("zeroshot", self.zeroshot),
            ("expert", self.expert),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(LabelingError::InvalidWeights(format!(
                    "{name} weight {v} must be positive and finite"
                )));
            }
        }
        Ok(())
    }
}

pub fn keyword_label(
    doc: &CleanDocument,
    lexicon: &BdiLexicon,
    bands: &SeverityBands,
    created_at: i64,
) -> Result<LabelVote, LabelingError> {
    let score = score_text(doc, lexicon)?;
    let label = map_score_to_band(score.total, bands)?;
    Ok(LabelVote::keyword(doc.id.clone(), label, created_at))
}

fn check_votes(votes: [&LabelVote; 3]) -> Result<(), LabelingError> {
    for (i, a) in votes.iter().enumerate() {
        if votes[i + 1..].iter().any(|b| b.source == a.source) {
            return Err(LabelingError::DuplicateSource(a.source));
        }
    }
    for (position, (vote, expected)) in votes.iter().zip(VoteSource::ALL).enumerate() {
        if vote.source != expected {
            return Err(LabelingError::UnexpectedSource {
                position,
                expected,
                found: vote.source,
            });
        }
    }
    if votes.iter().any(|v| v.doc_id != votes[0].doc_id) {
        return Err(LabelingError::MismatchedDocIds(
            votes.iter().map(|v| v.doc_id.clone()).collect(),
        ));
    }
    Ok(())
}

/// Fuses the keyword, zero-shot and expert votes for one document.
///
/// Each label collects the weights of the votes naming it. A unique
/// heaviest label wins; any tie at the top hands the decision to the expert.
pub fn fuse(
    kw: &LabelVote,
    zs: &LabelVote,
    ex: &LabelVote,
    weights: Option<&FusionWeights>,
) -> Result<FusedLabel, LabelingError> {
    check_votes([kw, zs, ex])?;
    let weights = weights.copied().unwrap_or_default();
    weights.validate()?;

    let mut tally: BTreeMap<SeverityLabel, f64> = BTreeMap::new();
    for (vote, w) in [
        (kw, weights.keyword),
        (zs, weights.zeroshot),
        (ex, weights.expert),
    ] {
        *tally.entry(vote.label).or_default() += w;
    }
    let best = tally.values().copied().fold(f64::MIN, f64::max);
    let tolerance = WEIGHT_TIE_EPSILON * best.max(1.0);
    let winners: Vec<SeverityLabel> = tally
        .iter()
        .filter(|(_, &w)| (best - w).abs() <= tolerance)
        .map(|(&l, _)| l)
        .collect();

    let (label, agreement) = if tally.len() == 1 {
        (kw.label, Agreement::Unanimous)
    } else if winners.len() > 1 {
        (ex.label, Agreement::ExpertFallback)
    } else {
        (winners[0], Agreement::Majority)
    };

    Ok(FusedLabel {
        doc_id: kw.doc_id.clone(),
        label,
        agreement,
        votes: [kw.clone(), zs.clone(), ex.clone()],
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingDoc {
    pub doc_id: String,
    pub missing: Vec<VoteSource>,
}

#[derive(Debug, Clone, Default)]
pub struct FusionOutcome {
    pub fused: Vec<FusedLabel>,
    pub pending: Vec<PendingDoc>,
}

impl FusionOutcome {
    pub fn count(&self, agreement: Agreement) -> usize {
        self.fused
            .iter()
            .filter(|f| f.agreement == agreement)
            .count()
    }
}

/// Collects votes per document; documents lacking any of the three votes
/// stay pending instead of being fused partially.
#[derive(Debug, Clone, Default)]
pub struct VoteTable {
    votes: BTreeMap<String, [Option<LabelVote>; 3]>,
}

impl VoteTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers documents so that ones without any vote show up as pending.
    pub fn with_documents<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            votes: ids
                .into_iter()
                .map(|id| (id.into(), Default::default()))
                .collect(),
        }
    }

    /// Adds a vote, replacing any earlier vote from the same source.
    pub fn insert(&mut self, vote: LabelVote) -> Result<(), LabelingError> {
        vote.validate()?;
        let slot = vote.source as usize;
        let doc_id = vote.doc_id.clone();
        self.votes.entry(doc_id).or_default()[slot] = Some(vote);
        Ok(())
    }

    pub fn get(&self, doc_id: &str, source: VoteSource) -> Option<&LabelVote> {
        self.votes.get(doc_id)?[source as usize].as_ref()
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    pub fn fuse_ready(
        &self,
        weights: Option<&FusionWeights>,
    ) -> Result<FusionOutcome, LabelingError> {
        let mut outcome = FusionOutcome::default();
        for (doc_id, slots) in &self.votes {
            match slots {
                [Some(kw), Some(zs), Some(ex)] => outcome.fused.push(fuse(kw, zs, ex, weights)?),
                _ => outcome.pending.push(PendingDoc {
                    doc_id: doc_id.clone(),
                    missing: VoteSource::ALL
                        .into_iter()
                        .filter(|s| slots[*s as usize].is_none())
                        .collect(),
                }),
            }
        }
        Ok(outcome)
    }
}
