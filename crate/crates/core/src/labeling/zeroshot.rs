//! Client side of the zero-shot classification service.
//!
//! Wire contract: the request is `{"text", "candidate_labels": [...]}` and the
//! response carries parallel `labels` / `scores` arrays.

use std::collections::HashSet;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{LabelVote, LabelingError};
use crate::bdi_lexicon::SeverityLabel;
use crate::corpus::CleanDocument;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZeroShotRequest {
    pub text: String,
    pub candidate_labels: Vec<String>,
}

impl ZeroShotRequest {
    pub fn new(text: impl Into<String>, labels: &[SeverityLabel]) -> Self {
        Self {
            text: text.into(),
            candidate_labels: labels.iter().map(|l| l.as_str().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotResponse {
    pub labels: Vec<String>,
    pub scores: Vec<f64>,
}

pub trait ZeroShotClassifier: Send + Sync {
    fn classify(&self, request: &ZeroShotRequest) -> Result<ZeroShotResponse, LabelingError>;
}

impl<T: ZeroShotClassifier + ?Sized> ZeroShotClassifier for &T {
    fn classify(&self, request: &ZeroShotRequest) -> Result<ZeroShotResponse, LabelingError> {
        (**self).classify(request)
    }
}

impl<T: ZeroShotClassifier + ?Sized> ZeroShotClassifier for std::sync::Arc<T> {
    fn classify(&self, request: &ZeroShotRequest) -> Result<ZeroShotResponse, LabelingError> {
        (**self).classify(request)
    }
}

/// Capped exponential backoff: attempt `n` (0-based) waits
/// `min(initial * 2^n, max)` before the next try.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
    #[serde(with = "millis")]
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_backoff: Duration::from_millis(250),
            max_backoff: Duration::from_secs(4),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.initial_backoff
            .checked_mul(factor)
            .unwrap_or(self.max_backoff)
            .min(self.max_backoff)
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Blocking HTTP client for a zero-shot endpoint that speaks the JSON contract.
pub struct HttpZeroShotClient {
    endpoint: String,
    token: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpZeroShotClient {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, retry: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build();
        Self {
            endpoint: endpoint.into(),
            token,
            retry,
            agent: config.into(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, request: &ZeroShotRequest) -> Result<ZeroShotResponse, Attempt> {
        let mut call = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            call = call.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = call
            .send_json(request)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(Attempt::Fail(LabelingError::Http { status, body }));
        }
        response
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fail(LabelingError::MalformedResponse(e.to_string())))
    }
}

enum Attempt {
    Retry(String),
    Fail(LabelingError),
}

impl ZeroShotClassifier for HttpZeroShotClient {
    fn classify(&self, request: &ZeroShotRequest) -> Result<ZeroShotResponse, LabelingError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for n in 0..attempts {
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    debug!("zero-shot attempt {} failed: {message}", n + 1);
                    last = message;
                    if n + 1 < attempts {
                        thread::sleep(self.retry.backoff(n));
                    }
                }
            }
        }
        Err(LabelingError::Network {
            attempts,
            message: last,
        })
    }
}

fn check_labelset(labelset: &[SeverityLabel]) -> Result<(), LabelingError> {
    if labelset.is_empty() {
        return Err(LabelingError::InvalidLabelSet("empty".into()));
    }
    let unique: HashSet<_> = labelset.iter().collect();
    if unique.len() != labelset.len() {
        return Err(LabelingError::InvalidLabelSet("repeated label".into()));
    }
    Ok(())
}

/// Validates a response against the candidate set and returns the argmax
/// label with its score. Equal top scores go to the more severe label.
pub fn interpret_response(
    response: &ZeroShotResponse,
    labelset: &[SeverityLabel],
) -> Result<(SeverityLabel, f64), LabelingError> {
    check_labelset(labelset)?;
    if response.labels.len() != response.scores.len() {
        return Err(LabelingError::MalformedResponse(format!(
            "{} labels but {} scores",
            response.labels.len(),
            response.scores.len()
        )));
    }
    if let Some(bad) = response
        .scores
        .iter()
        .find(|s| !(s.is_finite() && (0.0..=1.0).contains(*s)))
    {
        return Err(LabelingError::MalformedResponse(format!(
            "score {bad} outside [0, 1]"
        )));
    }

    let mut unexpected = Vec::new();
    let mut parsed = Vec::with_capacity(response.labels.len());
    for (name, &score) in response.labels.iter().zip(&response.scores) {
        match name.parse::<SeverityLabel>() {
            Ok(label) if labelset.contains(&label) => parsed.push((label, score)),
            _ => unexpected.push(name.clone()),
        }
    }
    let returned: HashSet<SeverityLabel> = parsed.iter().map(|(l, _)| *l).collect();
    if returned.len() != parsed.len() {
        return Err(LabelingError::MalformedResponse("repeated label".into()));
    }
    let missing: Vec<String> = labelset
        .iter()
        .filter(|l| !returned.contains(l))
        .map(|l| l.as_str().to_string())
        .collect();
    if !unexpected.is_empty() || !missing.is_empty() {
        return Err(LabelingError::LabelMismatch {
            unexpected,
            missing,
        });
    }

    let sum: f64 = response.scores.iter().sum();
    if (sum - 1.0).abs() > 0.05 {
        warn!("zero-shot scores sum to {sum:.4}, expected about 1");
    }

    Ok(parsed
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("label set is non-empty"))
}

pub fn zeroshot_label<C: ZeroShotClassifier + ?Sized>(
    doc: &CleanDocument,
    classifier: &C,
    labelset: &[SeverityLabel],
    created_at: i64,
) -> Result<LabelVote, LabelingError> {
    check_labelset(labelset)?;
    let response = classifier.classify(&ZeroShotRequest::new(doc.text.clone(), labelset))?;
    let (label, confidence) = interpret_response(&response, labelset)?;
    LabelVote::zeroshot(doc.id.clone(), label, confidence, created_at)
}
