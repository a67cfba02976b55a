//! Corpus ingestion and text normalization.
//!
//! Posts arrive as line-delimited JSON records and leave as [`CleanDocument`]s:
//! lowercase, URL-free, punctuation-free, stop-word-free token sequences.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};

const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

static URL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b[a-z][a-z0-9+.\-]*://\S*|\bwww\.\S*").expect("url pattern")
});

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate post ids in {path}: {}", ids.join(", "))]
    DuplicateIds { path: PathBuf, ids: Vec<String> },
    #[error("no built-in stop list for {0}")]
    NoBuiltinStopList(String),
    #[error("post {id} is tagged {post} but the stop list is for {stops}")]
    LanguageMismatch {
        id: String,
        post: String,
        stops: String,
    },
}

/// One post as collected, before any normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub body: String,
    pub language: String,
}

impl RawPost {
    /// Title and body joined by a single space, the text the labelers see.
    pub fn full_text(&self) -> String {
        match &self.title {
            Some(title) if !title.is_empty() => format!("{title} {}", self.body),
            _ => self.body.clone(),
        }
    }
}

/// A preprocessed post. `text` holds space-separated tokens only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub id: String,
    pub language: String,
    pub text: String,
    pub token_count: usize,
}

impl CleanDocument {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }

    pub fn is_empty(&self) -> bool {
        self.token_count == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopList {
    language: String,
    words: BTreeSet<String>,
}

impl StopList {
    /// Builds a stop list, lowercasing entries and dropping apostrophes so
    /// they line up with the tokens [`preprocess`] produces.
    pub fn new<I, S>(language: impl Into<String>, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words = words
            .into_iter()
            .map(|w| {
                w.as_ref()
                    .trim()
                    .to_lowercase()
                    .chars()
                    .filter(|c| !is_apostrophe(*c))
                    .collect::<String>()
            })
            .filter(|w| !w.is_empty())
            .collect();
        Self {
            language: language.into(),
            words,
        }
    }

    pub fn empty(language: impl Into<String>) -> Self {
        Self {
            language: language.into(),
            words: BTreeSet::new(),
        }
    }

    /// The bundled English list.
    pub fn english() -> Self {
        Self::new("en", parse_stoplist_lines(ENGLISH_STOPWORDS))
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

fn parse_stoplist_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

/// Loads a stop list from `path`, or the built-in list for `language`.
pub fn load_stoplist(language: &str, path: Option<&Path>) -> Result<StopList, CorpusError> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            Ok(StopList::new(language, parse_stoplist_lines(&text)))
        }
        None if language == "en" => Ok(StopList::english()),
        None => Err(CorpusError::NoBuiltinStopList(language.to_string())),
    }
}

/// Reads a line-delimited corpus file. Blank lines are skipped; any
/// malformed line or duplicated id rejects the whole file.
pub fn ingest_corpus(path: &Path) -> Result<Vec<RawPost>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&text, path)
}

fn parse_corpus(text: &str, path: &Path) -> Result<Vec<RawPost>, CorpusError> {
    let malformed = |line: usize, message: String| CorpusError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut posts = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let post: RawPost =
            serde_json::from_str(line).map_err(|e| malformed(line_no, e.to_string()))?;
        if post.id.trim().is_empty() {
            return Err(malformed(line_no, "empty id".into()));
        }
        if post.body.trim().is_empty() {
            return Err(malformed(
                line_no,
                format!("post {} has an empty body", post.id),
            ));
        }
        posts.push(post);
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut offenders = Vec::new();
    for post in &posts {
        let count = seen.entry(&post.id).or_default();
        *count += 1;
        if *count == 2 {
            offenders.push(post.id.clone());
        }
    }
    if !offenders.is_empty() {
        return Err(CorpusError::DuplicateIds {
            path: path.to_path_buf(),
            ids: offenders,
        });
    }
    Ok(posts)
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2018}' | '\u{2019}' | '\u{02BC}')
}

/// The token pipeline shared by documents and questionnaire statements:
/// strip URLs, lowercase, drop apostrophes, turn remaining punctuation into
/// spaces, split, and remove stop words.
pub fn normalize_tokens(text: &str, stops: &StopList) -> Vec<String> {
    let without_urls = URL_RE.replace_all(text, " ");
    let lowered = without_urls.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .filter(|c| !is_apostrophe(*c))
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| !stops.contains(t))
        .map(str::to_owned)
        .collect()
}

pub fn preprocess(post: &RawPost, stops: &StopList) -> Result<CleanDocument, CorpusError> {
    if stops.language() != post.language {
        return Err(CorpusError::LanguageMismatch {
            id: post.id.clone(),
            post: post.language.clone(),
            stops: stops.language().to_string(),
        });
    }
    let tokens = normalize_tokens(&post.full_text(), stops);
    if tokens.is_empty() {
        warn!("post {} is empty after preprocessing; kept", post.id);
    }
    Ok(CleanDocument {
        id: post.id.clone(),
        language: post.language.clone(),
        token_count: tokens.len(),
        text: tokens.join(" "),
    })
}
