//! Annotation service: task queue, expert label intake, fusion and a
//! caching zero-shot proxy over HTTP.
//!
//! All writes go through one mutex-guarded [`DurableStore`], so the log has
//! a single writer and readers always see a consistent state. Annotations
//! are acknowledged only after the store has synced them.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use depsev_core::labeling::{
    fuse, interpret_response, write_expert_labels, zeroshot_label, Agreement, AnnotationStore,
    ExpertAnnotation, FusionWeights, LabelVote, LabelingError, ZeroShotClassifier, ZeroShotRequest,
};
use depsev_core::{CleanDocument, SeverityLabel};

use crate::store::DurableStore;

/// One corpus document as the service sees it. The text is never modified.
#[derive(Debug, Clone)]
pub struct ServiceDocument {
    pub doc_id: String,
    pub language: String,
    pub text: String,
    pub clean: CleanDocument,
    pub keyword: LabelVote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Unlabeled,
    Labeled,
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineVotes {
    pub keyword: SeverityLabel,
    pub zeroshot: Option<SeverityLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub doc_id: String,
    pub text: String,
    pub language: String,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_label: Option<SeverityLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_label: Option<SeverityLabel>,
    /// Absent in blind mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine_votes: Option<MachineVotes>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub labeled: usize,
    pub fused: usize,
    /// Documents still waiting for an expert label.
    pub pending: usize,
}

struct Inner {
    store: DurableStore,
    zeroshot: BTreeMap<String, LabelVote>,
}

pub struct Service {
    documents: BTreeMap<String, ServiceDocument>,
    inner: Mutex<Inner>,
    classifier: Option<Arc<dyn ZeroShotClassifier>>,
    weights: FusionWeights,
    blind_mode: bool,
    timestamp: i64,
}

pub type SharedService = Arc<Service>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

impl Service {
    pub fn new(
        documents: Vec<ServiceDocument>,
        store: DurableStore,
        classifier: Option<Arc<dyn ZeroShotClassifier>>,
        weights: FusionWeights,
        blind_mode: bool,
        timestamp: i64,
    ) -> Self {
        let zeroshot = store
            .fused_all()
            .map(|f| (f.doc_id.clone(), f.votes[1].clone()))
            .collect();
        Self {
            documents: documents
                .into_iter()
                .map(|d| (d.doc_id.clone(), d))
                .collect(),
            inner: Mutex::new(Inner { store, zeroshot }),
            classifier,
            weights,
            blind_mode,
            timestamp,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn task(&self, inner: &Inner, doc: &ServiceDocument, blind: bool) -> AnnotationTask {
        let expert = inner.store.effective(&doc.doc_id).map(|a| a.label);
        let fused = inner.store.fused(&doc.doc_id).map(|f| f.label);
        let status = match (expert, fused) {
            (_, Some(_)) => TaskStatus::Fused,
            (Some(_), None) => TaskStatus::Labeled,
            (None, None) => TaskStatus::Unlabeled,
        };
        AnnotationTask {
            doc_id: doc.doc_id.clone(),
            text: doc.text.clone(),
            language: doc.language.clone(),
            status,
            expert_label: expert,
            fused_label: fused,
            machine_votes: (!blind).then(|| MachineVotes {
                keyword: doc.keyword.label,
                zeroshot: inner.zeroshot.get(&doc.doc_id).map(|v| v.label),
            }),
        }
    }

    pub fn tasks(
        &self,
        status: Option<TaskStatus>,
        limit: Option<usize>,
        blind: bool,
    ) -> Vec<AnnotationTask> {
        let inner = self.lock();
        self.documents
            .values()
            .map(|d| self.task(&inner, d, blind))
            .filter(|t| status.is_none_or(|s| t.status == s))
            .take(limit.unwrap_or(usize::MAX))
            .collect()
    }

    pub fn get_task(&self, doc_id: &str, blind: bool) -> Option<AnnotationTask> {
        let doc = self.documents.get(doc_id)?;
        Some(self.task(&self.lock(), doc, blind))
    }

    pub fn progress(&self) -> Progress {
        let inner = self.lock();
        let labeled = inner.store.memory().labeled_count();
        Progress {
            total: self.documents.len(),
            labeled,
            fused: inner.store.fused_all().count(),
            pending: self.documents.len() - labeled,
        }
    }

    /// Records a label; a document that was already fused is re-fused so
    /// its fused label follows the expert's latest decision.
    pub fn annotate(
        &self,
        annotation: ExpertAnnotation,
        blind_mode: Option<bool>,
    ) -> Result<serde_json::Value, LabelingError> {
        let mut inner = self.lock();
        let ack = inner.store.record(annotation, blind_mode)?;
        if !ack.duplicate && inner.store.fused(&ack.doc_id).is_some() {
            self.fuse_one(&mut inner, &ack.doc_id)?;
        }
        Ok(json!({
            "status": if ack.duplicate { "duplicate" } else { "recorded" },
            "doc_id": ack.doc_id,
            "sequence": ack.sequence,
            "effective_label": ack.effective_label,
        }))
    }

    fn fuse_one(&self, inner: &mut Inner, doc_id: &str) -> Result<bool, LabelingError> {
        let doc = &self.documents[doc_id];
        let (Some(zs), Some(expert)) = (inner.zeroshot.get(doc_id), inner.store.effective(doc_id))
        else {
            return Ok(false);
        };
        let fused = fuse(&doc.keyword, zs, &expert.to_vote(), Some(&self.weights))?;
        if inner.store.fused(doc_id) != Some(&fused) {
            inner
                .store
                .record_fused(fused)
                .map_err(|e| LabelingError::Store(e.to_string()))?;
        }
        Ok(true)
    }

    /// Obtains missing zero-shot votes for labeled documents, then fuses
    /// every document holding all three votes. Blocking.
    pub fn fuse_all(&self) -> Result<serde_json::Value, ApiError> {
        let needs_vote: Vec<String> = {
            let inner = self.lock();
            inner
                .store
                .memory()
                .effective_all()
                .into_iter()
                .map(|a| a.doc_id)
                .filter(|id| !inner.zeroshot.contains_key(id))
                .collect()
        };
        if !needs_vote.is_empty() {
            let classifier = self.classifier.as_ref().ok_or_else(|| {
                ApiError::new(
                    StatusCode::SERVICE_UNAVAILABLE,
                    "zero-shot endpoint not configured",
                )
            })?;
            let mut fresh = Vec::with_capacity(needs_vote.len());
            for id in &needs_vote {
                let doc = &self.documents[id];
                let vote = zeroshot_label(
                    &doc.clean,
                    classifier.as_ref(),
                    &SeverityLabel::ALL,
                    self.timestamp,
                )
                .map_err(upstream)?;
                fresh.push(vote);
            }
            let mut inner = self.lock();
            for vote in fresh {
                inner.zeroshot.insert(vote.doc_id.clone(), vote);
            }
        }

        let mut inner = self.lock();
        let labeled: Vec<String> = inner
            .store
            .memory()
            .effective_all()
            .into_iter()
            .map(|a| a.doc_id)
            .collect();
        for id in &labeled {
            self.fuse_one(&mut inner, id).map_err(internal)?;
        }
        let mut counts: BTreeMap<&str, usize> = [
            Agreement::Unanimous,
            Agreement::Majority,
            Agreement::ExpertFallback,
        ]
        .iter()
        .map(|a| (a.as_str(), 0))
        .collect();
        for f in inner.store.fused_all() {
            *counts.entry(f.agreement.as_str()).or_default() += 1;
        }
        let fused = inner.store.fused_all().count();
        Ok(json!({
            "fused": fused,
            "pending": self.documents.len() - fused,
            "agreement": counts,
        }))
    }

    pub fn export_labels(&self) -> Result<String, LabelingError> {
        let effective = self.lock().store.memory().effective_all();
        let mut buf = Vec::new();
        write_expert_labels(&mut buf, &effective)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    pub fn zeroshot(&self, request: &ZeroShotRequest) -> Result<serde_json::Value, ApiError> {
        let classifier = self.classifier.as_ref().ok_or_else(|| {
            ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "zero-shot endpoint not configured",
            )
        })?;
        let response = classifier.classify(request).map_err(upstream)?;
        Ok(serde_json::to_value(response).expect("response serializes"))
    }
}

fn upstream(e: LabelingError) -> ApiError {
    ApiError::new(StatusCode::BAD_GATEWAY, format!("zero-shot service: {e}"))
}

#[derive(Debug, Deserialize)]
struct TaskQuery {
    status: Option<TaskStatus>,
    limit: Option<usize>,
    blind: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct BlindQuery {
    blind: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct AnnotationBody {
    doc_id: String,
    annotator_id: String,
    label: String,
    #[serde(default)]
    submitted_at: Option<i64>,
    #[serde(default)]
    blind_mode: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct ZeroShotBody {
    text: String,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("malformed request body: {e}"),
        )
    })
}

fn now_seconds() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(internal)?
}

async fn list_tasks(
    State(svc): State<SharedService>,
    Query(q): Query<TaskQuery>,
) -> impl IntoResponse {
    let blind = q.blind.unwrap_or(svc.blind_mode);
    Json(svc.tasks(q.status, q.limit, blind))
}

async fn get_task(
    State(svc): State<SharedService>,
    Path(doc_id): Path<String>,
    Query(q): Query<BlindQuery>,
) -> Result<Json<AnnotationTask>, ApiError> {
    svc.get_task(&doc_id, q.blind.unwrap_or(svc.blind_mode))
        .map(Json)
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                format!("unknown document {doc_id:?}"),
            )
        })
}

async fn post_annotation(
    State(svc): State<SharedService>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let body: AnnotationBody = parse_json(&body)?;
    if body.annotator_id.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "annotator_id is empty",
        ));
    }
    let label: SeverityLabel =
        body.label
            .parse()
            .map_err(|e: depsev_core::bdi_lexicon::ParseLabelError| ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "error": e.to_string(), "allowed": e.allowed }),
            })?;
    let annotation = ExpertAnnotation {
        doc_id: body.doc_id,
        annotator_id: body.annotator_id,
        label,
        submitted_at: body.submitted_at.unwrap_or_else(now_seconds),
    };
    let blind_mode = body.blind_mode;
    blocking(move || {
        svc.annotate(annotation, blind_mode).map_err(|e| match e {
            LabelingError::UnknownDocument(id) => {
                ApiError::new(StatusCode::NOT_FOUND, format!("unknown document {id:?}"))
            }
            other => internal(other),
        })
    })
    .await
    .map(Json)
}

async fn get_progress(State(svc): State<SharedService>) -> Json<Progress> {
    Json(svc.progress())
}

async fn post_fuse(State(svc): State<SharedService>) -> Result<Json<serde_json::Value>, ApiError> {
    blocking(move || svc.fuse_all()).await.map(Json)
}

async fn export_labels(State(svc): State<SharedService>) -> Result<Response, ApiError> {
    let csv = svc.export_labels().map_err(internal)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn post_zeroshot(
    State(svc): State<SharedService>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let body: ZeroShotBody = parse_json(&body)?;
    let labels = match body.labels {
        None => SeverityLabel::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| n.parse::<SeverityLabel>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "error": e.to_string(), "allowed": e.allowed }),
            })?,
    };
    let request = ZeroShotRequest::new(body.text, &labels);
    blocking(move || {
        let value = svc.zeroshot(&request)?;
        let response = serde_json::from_value(value.clone()).map_err(internal)?;
        interpret_response(&response, &labels).map_err(upstream)?;
        Ok(value)
    })
    .await
    .map(Json)
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(service: SharedService) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/tasks", get(list_tasks))
        .route("/tasks/{doc_id}", get(get_task))
        .route("/annotations", post(post_annotation))
        .route("/progress", get(get_progress))
        .route("/fuse", post(post_fuse))
        .route("/export/labels", get(export_labels))
        .route("/zeroshot", post(post_zeroshot))
        .with_state(service)
}

/// Serves until the listener fails or the process is stopped.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: SharedService,
) -> std::io::Result<()> {
    info!("serving {} documents", service.documents.len());
    axum::serve(listener, router(service)).await
}

/// Loads the corpus, computes keyword votes and opens the store under
/// `<out>/store`. Machine votes are computed once here; the corpus text is
/// kept exactly as ingested.
pub fn build_service(
    config: &crate::config::PipelineConfig,
    classifier: Option<Arc<dyn ZeroShotClassifier>>,
) -> anyhow::Result<Service> {
    use anyhow::Context;
    use depsev_core::corpus::preprocess;
    use depsev_core::labeling::keyword_label;

    let pipeline = crate::pipeline::Pipeline::new(config);
    let bands = pipeline.bands()?;
    let mut documents = Vec::new();
    for (lang, posts) in pipeline.raw_posts()? {
        let stops = pipeline.stoplist(&lang)?;
        let lexicon = pipeline.lexicon(&lang)?;
        for post in posts {
            let clean = preprocess(&post, &stops)?;
            let keyword = keyword_label(&clean, &lexicon, &bands, config.timestamp)?;
            documents.push(ServiceDocument {
                doc_id: post.id.clone(),
                language: lang.clone(),
                text: post.full_text(),
                clean,
                keyword,
            });
        }
    }
    let classifier = match classifier {
        Some(c) => Some(c),
        None if config.zeroshot_endpoint().is_some() => Some(pipeline.classifier()?),
        None => None,
    };
    let store_dir = config.out_dir().join("store");
    let store = DurableStore::open(&store_dir, documents.iter().map(|d| d.doc_id.clone()))
        .with_context(|| format!("cannot open annotation store in {}", store_dir.display()))?;
    Ok(Service::new(
        documents,
        store,
        classifier,
        config.fusion,
        config.blind_mode,
        config.timestamp,
    ))
}
