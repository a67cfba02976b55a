use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::{FeatureError, SparseVector};
use crate::corpus::CleanDocument;

/// Fitted vocabulary with smoothed inverse document frequencies:
/// `idf(t) = ln((1 + n) / (1 + df(t))) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    terms: Vec<String>,
    vocabulary: HashMap<String, u32>,
    idf: Vec<f64>,
    document_count: usize,
}

impl TfidfModel {
    pub fn document_count(&self) -> usize {
        self.document_count
    }

    pub fn vocabulary_len(&self) -> usize {
        self.terms.len()
    }

    pub fn index_of(&self, term: &str) -> Option<u32> {
        self.vocabulary.get(term).copied()
    }

    pub fn term(&self, index: u32) -> Option<&str> {
        self.terms.get(index as usize).map(String::as_str)
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.idf[i as usize])
    }

    /// Raw counts times idf, L2-normalized. Unknown tokens are ignored.
    pub fn transform(&self, doc: &CleanDocument) -> SparseVector {
        let mut counts: HashMap<u32, f64> = HashMap::new();
        for token in doc.tokens() {
            if let Some(&i) = self.vocabulary.get(token) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(u32, f64)> = counts
            .into_iter()
            .map(|(i, tf)| (i, tf * self.idf[i as usize]))
            .collect();
        entries.sort_by_key(|(i, _)| *i);
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut entries {
                *w /= norm;
            }
        }
        SparseVector::from_entries(entries).expect("sorted unique positive weights")
    }

    /// Writes `document_count`, then one `term<TAB>index<TAB>idf` line per term.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.document_count)?;
        for (i, (term, idf)) in self.terms.iter().zip(&self.idf).enumerate() {
            writeln!(out, "{term}\t{i}\t{idf:?}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self, FeatureError> {
        let mut lines = input.lines().enumerate();
        let parse_err = |line: usize, message: String| FeatureError::Parse {
            line: line + 1,
            message,
        };
        let (n, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "missing document count".into()))?;
        let document_count = header?
            .trim()
            .parse()
            .map_err(|e| parse_err(n, format!("document count: {e}")))?;

        let mut terms = Vec::new();
        let mut idf = Vec::new();
        for (n, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(parse_err(
                    n,
                    format!("expected 3 columns, found {}", cols.len()),
                ));
            }
            let index: usize = cols[1]
                .parse()
                .map_err(|e| parse_err(n, format!("index: {e}")))?;
            if index != terms.len() {
                return Err(parse_err(n, format!("index {index} out of sequence")));
            }
            let weight: f64 = cols[2]
                .parse()
                .map_err(|e| parse_err(n, format!("idf: {e}")))?;
            if !(weight.is_finite() && weight >= 1.0) {
                return Err(parse_err(n, format!("idf {weight} below 1")));
            }
            terms.push(cols[0].to_string());
            idf.push(weight);
        }
        let vocabulary = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if vocabulary.len() != terms.len() {
            return Err(parse_err(0, "repeated term".into()));
        }
        Ok(Self {
            terms,
            vocabulary,
            idf,
            document_count,
        })
    }
}

/// Learns vocabulary (first-seen order) and idf weights.
pub fn fit_tfidf(docs: &[CleanDocument]) -> Result<TfidfModel, FeatureError> {
    if docs.iter().all(CleanDocument::is_empty) {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut terms: Vec<String> = Vec::new();
    let mut vocabulary: HashMap<String, u32> = HashMap::new();
    let mut df: Vec<usize> = Vec::new();
    for doc in docs {
        let mut seen_here = std::collections::HashSet::new();
        for token in doc.tokens() {
            let index = *vocabulary.entry(token.to_string()).or_insert_with(|| {
                terms.push(token.to_string());
                df.push(0);
                (terms.len() - 1) as u32
            });
            if seen_here.insert(index) {
                df[index as usize] += 1;
            }
        }
    }
    let n = docs.len() as f64;
    let idf = df
        .iter()
        .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    Ok(TfidfModel {
        terms,
        vocabulary,
        idf,
        document_count: docs.len(),
    })
}

pub fn transform(model: &TfidfModel, doc: &CleanDocument) -> SparseVector {
    model.transform(doc)
}
