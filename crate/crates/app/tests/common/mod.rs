//! Shared helpers: fixture paths, a cue-word zero-shot stub server and an
//! in-process annotation service.
#![allow(dead_code)]

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};

use depsev::server::{router, SharedService};
use depsev::PipelineConfig;
use depsev_core::labeling::{ZeroShotRequest, ZeroShotResponse};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// The bundled fixture config writing into `out`.
pub fn fixture_config(out: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::load(&fixture("config.toml")).expect("fixture config");
    config.out_dir = out.to_path_buf();
    config
}

#[derive(Default)]
pub struct StubState {
    cues: HashMap<String, Vec<String>>,
    pub calls: AtomicUsize,
    pub failing: AtomicBool,
}

/// Scores each candidate label by how many of its cue words occur in the
/// text, plus a small floor, normalized to sum to one.
fn score(state: &StubState, request: &ZeroShotRequest) -> ZeroShotResponse {
    let tokens: Vec<&str> = request.text.split_whitespace().collect();
    let raw: Vec<f64> = request
        .candidate_labels
        .iter()
        .map(|label| {
            let cues = state.cues.get(label).map(Vec::as_slice).unwrap_or(&[]);
            0.01 + tokens
                .iter()
                .filter(|t| cues.iter().any(|c| c == *t))
                .count() as f64
        })
        .collect();
    let total: f64 = raw.iter().sum();
    ZeroShotResponse {
        labels: request.candidate_labels.clone(),
        scores: raw.iter().map(|r| r / total).collect(),
    }
}

async fn classify(
    State(state): State<Arc<StubState>>,
    Json(request): Json<ZeroShotRequest>,
) -> Result<Json<ZeroShotResponse>, StatusCode> {
    state.calls.fetch_add(1, Ordering::SeqCst);
    if state.failing.load(Ordering::SeqCst) {
        return Err(StatusCode::INTERNAL_SERVER_ERROR);
    }
    Ok(Json(score(&state, &request)))
}

pub struct Stub {
    pub addr: SocketAddr,
    pub state: Arc<StubState>,
}

impl Stub {
    pub fn url(&self) -> String {
        format!("http://{}/classify", self.addr)
    }

    pub fn calls(&self) -> usize {
        self.state.calls.load(Ordering::SeqCst)
    }
}

/// Serves `app` on a free local port from a background runtime.
pub fn spawn_router(app: Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().expect("server address")
}

pub fn spawn_stub() -> Stub {
    let cues: HashMap<String, Vec<String>> =
        serde_json::from_str(&std::fs::read_to_string(fixture("stub_cues.json")).unwrap()).unwrap();
    let state = Arc::new(StubState {
        cues,
        ..StubState::default()
    });
    let app = Router::new()
        .route("/classify", post(classify))
        .with_state(state.clone());
    Stub {
        addr: spawn_router(app),
        state,
    }
}

pub fn spawn_service(service: SharedService) -> String {
    format!("http://{}", spawn_router(router(service)))
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}
