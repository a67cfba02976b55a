//! Questionnaire-derived keyword lexicon, document scoring and severity bands.
//!
//! Each of the 21 questionnaire items offers four statements scored 0..=3.
//! The lexicon keeps every non-stop-word token of every statement together
//! with its statement's score (the maximum, when a token recurs inside one
//! item). A document scores, per item, the highest-scoring keyword it
//! contains; the per-item scores add up to a 0..=63 total that the
//! [`SeverityBands`] map onto a [`SeverityLabel`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_tokens, CleanDocument, StopList};

pub const ITEM_COUNT: u8 = 21;
pub const MAX_OPTION_SCORE: u8 = 3;
pub const MAX_TOTAL: u32 = ITEM_COUNT as u32 * MAX_OPTION_SCORE as u32;

const ENGLISH_QUESTIONNAIRE: &str = include_str!("../data/questionnaire_en.jsonl");

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("questionnaire is empty")]
    EmptyQuestionnaire,
    #[error("item {item} has {found} options, expected 4")]
    WrongOptionCount { item: u8, found: usize },
    #[error("item {item}: {reason}")]
    InvalidItem { item: u8, reason: String },
    #[error("invalid lexicon entry: {0}")]
    InvalidEntry(String),
    #[error("invalid severity bands: {0}")]
    InvalidBands(String),
    #[error("score {0} is outside 0..=63")]
    ScoreOutOfRange(u32),
    #[error("document {doc} is tagged {doc_language} but the lexicon is for {lexicon_language}")]
    LanguageMismatch {
        doc: String,
        doc_language: String,
        lexicon_language: String,
    },
    #[error(transparent)]
    Label(#[from] ParseLabelError),
}

/// The six BDI severity classes, ordered from least to most severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityLabel {
    Normal,
    Mild,
    Borderline,
    Moderate,
    Severe,
    Extreme,
}

impl SeverityLabel {
    pub const ALL: [SeverityLabel; 6] = [
        SeverityLabel::Normal,
        SeverityLabel::Mild,
        SeverityLabel::Borderline,
        SeverityLabel::Moderate,
        SeverityLabel::Severe,
        SeverityLabel::Extreme,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SeverityLabel::Normal => "normal",
            SeverityLabel::Mild => "mild",
            SeverityLabel::Borderline => "borderline",
            SeverityLabel::Moderate => "moderate",
            SeverityLabel::Severe => "severe",
            SeverityLabel::Extreme => "extreme",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SeverityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown severity label {given:?}; allowed: {}", allowed.join(", "))]
pub struct ParseLabelError {
    pub given: String,
    pub allowed: Vec<&'static str>,
}

impl FromStr for SeverityLabel {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim();
        SeverityLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| ParseLabelError {
                given: s.to_string(),
                allowed: SeverityLabel::ALL.iter().map(|l| l.as_str()).collect(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireOption {
    pub score: u8,
    pub statement: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireItem {
    pub index: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    pub options: Vec<QuestionnaireOption>,
}

pub fn parse_questionnaire(text: &str) -> Result<Vec<QuestionnaireItem>, LexiconError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| LexiconError::Parse {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_questionnaire(path: &Path) -> Result<Vec<QuestionnaireItem>, LexiconError> {
    let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_questionnaire(&text)
}

/// The bundled English questionnaire.
pub fn english_questionnaire() -> Vec<QuestionnaireItem> {
    parse_questionnaire(ENGLISH_QUESTIONNAIRE).expect("bundled questionnaire parses")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub item_index: u8,
    pub keyword: String,
    pub score: u8,
}

#[derive(Debug, Clone)]
pub struct BdiLexicon {
    language: String,
    entries: Vec<LexiconEntry>,
    by_keyword: HashMap<String, Vec<(u8, u8)>>,
}

impl BdiLexicon {
    pub fn new(
        language: impl Into<String>,
        mut entries: Vec<LexiconEntry>,
    ) -> Result<Self, LexiconError> {
        entries.sort();
        let mut seen = HashSet::new();
        for e in &entries {
            if !(1..=ITEM_COUNT).contains(&e.item_index) {
                return Err(LexiconError::InvalidEntry(format!(
                    "item index {} outside 1..=21",
                    e.item_index
                )));
            }
            if e.score > MAX_OPTION_SCORE {
                return Err(LexiconError::InvalidEntry(format!(
                    "score {} for {:?} outside 0..=3",
                    e.score, e.keyword
                )));
            }
            if e.keyword.is_empty()
                || e.keyword.chars().any(char::is_whitespace)
                || e.keyword != e.keyword.to_lowercase()
            {
                return Err(LexiconError::InvalidEntry(format!(
                    "keyword {:?} must be one lowercase token",
                    e.keyword
                )));
            }
            if !seen.insert((e.item_index, e.keyword.as_str())) {
                return Err(LexiconError::InvalidEntry(format!(
                    "keyword {:?} repeated in item {}",
                    e.keyword, e.item_index
                )));
            }
        }
        let mut by_keyword: HashMap<String, Vec<(u8, u8)>> = HashMap::new();
        for e in &entries {
            by_keyword
                .entry(e.keyword.clone())
                .or_default()
                .push((e.item_index, e.score));
        }
        Ok(Self {
            language: language.into(),
            entries,
            by_keyword,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    /// Entries sorted by item index, then keyword.
    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// (item, score) pairs a keyword contributes to.
    pub fn lookup(&self, keyword: &str) -> &[(u8, u8)] {
        self.by_keyword.get(keyword).map_or(&[], Vec::as_slice)
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "item_index\tkeyword\tscore")?;
        for e in &self.entries {
            writeln!(out, "{}\t{}\t{}", e.item_index, e.keyword, e.score)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(language: &str, input: R) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| LexiconError::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() || (n == 0 && line.starts_with("item_index")) {
                continue;
            }
            let parse_err = |message: String| LexiconError::Parse {
                line: n + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(parse_err(format!(
                    "expected 3 columns, found {}",
                    cols.len()
                )));
            }
            entries.push(LexiconEntry {
                item_index: cols[0]
                    .parse()
                    .map_err(|e| parse_err(format!("item_index: {e}")))?,
                keyword: cols[1].to_string(),
                score: cols[2]
                    .parse()
                    .map_err(|e| parse_err(format!("score: {e}")))?,
            });
        }
        Self::new(language, entries)
    }
}

fn validate_item(item: &QuestionnaireItem, seen: &mut HashSet<u8>) -> Result<(), LexiconError> {
    let invalid = |reason: String| LexiconError::InvalidItem {
        item: item.index,
        reason,
    };
    if !(1..=ITEM_COUNT).contains(&item.index) {
        return Err(invalid("index outside 1..=21".into()));
    }
    if !seen.insert(item.index) {
        return Err(invalid("index appears twice".into()));
    }
    if item.options.len() != 4 {
        return Err(LexiconError::WrongOptionCount {
            item: item.index,
            found: item.options.len(),
        });
    }
    let mut scores: Vec<u8> = item.options.iter().map(|o| o.score).collect();
    scores.sort_unstable();
    if scores != [0, 1, 2, 3] {
        return Err(invalid(format!("option scores {scores:?} are not 0,1,2,3")));
    }
    if item.options.iter().any(|o| o.statement.trim().is_empty()) {
        return Err(invalid("empty statement".into()));
    }
    Ok(())
}

/// Extracts the keyword lexicon from a questionnaire. Statements go through
/// the same normalization as documents so that matching is token-exact.
pub fn build_lexicon(
    items: &[QuestionnaireItem],
    stops: &StopList,
) -> Result<BdiLexicon, LexiconError> {
    if items.is_empty() {
        return Err(LexiconError::EmptyQuestionnaire);
    }
    let mut seen = HashSet::new();
    for item in items {
        validate_item(item, &mut seen)?;
    }
    if items.len() != ITEM_COUNT as usize {
        warn!("questionnaire has {} items, expected 21", items.len());
    }

    let mut entries = Vec::new();
    for item in items {
        let mut best: BTreeMap<String, u8> = BTreeMap::new();
        for option in &item.options {
            let tokens = normalize_tokens(&option.statement, stops);
            if tokens.is_empty() {
                warn!(
                    "item {} option {} has only stop words: {:?}",
                    item.index, option.score, option.statement
                );
            }
            for token in tokens {
                let score = best.entry(token).or_insert(option.score);
                *score = (*score).max(option.score);
            }
        }
        entries.extend(best.into_iter().map(|(keyword, score)| LexiconEntry {
            item_index: item.index,
            keyword,
            score,
        }));
    }
    BdiLexicon::new(stops.language(), entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeywordHit {
    pub keyword: String,
    pub item_index: u8,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BdiScore {
    pub total: u32,
    /// Only items with at least one hit appear.
    pub per_item: BTreeMap<u8, u8>,
    pub matched_keywords: Vec<KeywordHit>,
}

/// Scores a token set. Repeated tokens count once.
pub fn score_tokens<'a, I>(tokens: I, lexicon: &BdiLexicon) -> BdiScore
where
    I: IntoIterator<Item = &'a str>,
{
    let unique: HashSet<&str> = tokens.into_iter().collect();
    let mut hits: Vec<KeywordHit> = unique
        .into_iter()
        .flat_map(|token| {
            lexicon
                .lookup(token)
                .iter()
                .map(move |&(item_index, score)| KeywordHit {
                    keyword: token.to_string(),
                    item_index,
                    score,
                })
        })
        .collect();
    hits.sort_by(|a, b| (a.item_index, &a.keyword).cmp(&(b.item_index, &b.keyword)));

    let mut per_item: BTreeMap<u8, u8> = BTreeMap::new();
    for hit in &hits {
        let s = per_item.entry(hit.item_index).or_insert(hit.score);
        *s = (*s).max(hit.score);
    }
    BdiScore {
        total: per_item.values().map(|&s| u32::from(s)).sum(),
        per_item,
        matched_keywords: hits,
    }
}

pub fn score_text(doc: &CleanDocument, lexicon: &BdiLexicon) -> Result<BdiScore, LexiconError> {
    if doc.language != lexicon.language() {
        return Err(LexiconError::LanguageMismatch {
            doc: doc.id.clone(),
            doc_language: doc.language.clone(),
            lexicon_language: lexicon.language().to_string(),
        });
    }
    Ok(score_tokens(doc.tokens(), lexicon))
}

/// Contiguous score ranges, each mapped to one label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityBands {
    bands: Vec<(u32, SeverityLabel)>,
}

impl Default for SeverityBands {
    /// 0–10 normal, 11–16 mild, 17–20 borderline, 21–30 moderate,
    /// 31–40 severe, 41–63 extreme.
    fn default() -> Self {
        Self {
            bands: vec![
                (10, SeverityLabel::Normal),
                (16, SeverityLabel::Mild),
                (20, SeverityLabel::Borderline),
                (30, SeverityLabel::Moderate),
                (40, SeverityLabel::Severe),
                (63, SeverityLabel::Extreme),
            ],
        }
    }
}

impl SeverityBands {
    /// `bands` holds inclusive upper bounds in increasing order; the last must be 63.
    pub fn new(bands: Vec<(u32, SeverityLabel)>) -> Result<Self, LexiconError> {
        if bands.is_empty() {
            return Err(LexiconError::InvalidBands("no bands".into()));
        }
        if bands.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(LexiconError::InvalidBands(
                "upper bounds must be strictly increasing".into(),
            ));
        }
        let last = bands[bands.len() - 1].0;
        if last != MAX_TOTAL {
            return Err(LexiconError::InvalidBands(format!(
                "last upper bound is {last}, expected 63"
            )));
        }
        Ok(Self { bands })
    }

    pub fn bands(&self) -> &[(u32, SeverityLabel)] {
        &self.bands
    }

    /// Parses `upper_bound,label` lines (comma, tab or space separated; `#` comments).
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut bands = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| LexiconError::Parse {
                line: n + 1,
                message,
            };
            let mut cols = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|c| !c.is_empty());
            let (Some(bound), Some(label), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(parse_err("expected `upper_bound,label`".into()));
            };
            let bound = bound
                .parse()
                .map_err(|e| parse_err(format!("upper bound: {e}")))?;
            bands.push((bound, label.parse()?));
        }
        Self::new(bands)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# upper_bound_inclusive,label\n");
        for (bound, label) in &self.bands {
            s.push_str(&format!("{bound},{label}\n"));
        }
        s
    }
}

pub fn map_score_to_band(score: u32, bands: &SeverityBands) -> Result<SeverityLabel, LexiconError> {
    if score > MAX_TOTAL {
        return Err(LexiconError::ScoreOutOfRange(score));
    }
    bands
        .bands
        .iter()
        .find(|(upper, _)| score <= *upper)
        .map(|&(_, label)| label)
        .ok_or(LexiconError::ScoreOutOfRange(score))
}
