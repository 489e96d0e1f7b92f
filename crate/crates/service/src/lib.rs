//! HTTP API over session directories: frame browsing, search, clustering,
//! fine-grained labels, novelty detection, phenotype prediction and a
//! tool-routing chat endpoint, with an append-only invocation log.

mod api;
mod render;
pub mod session;
pub mod tools;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, Mutex};

use axum::routing::{get, post};
use axum::Router;
use ethokit::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

pub use session::{InvocationRecord, SessionHandle, Snapshot};
pub use tools::{replay, Tool};

/// Inputs larger than this many frames run as background jobs.
pub const SYNC_FRAME_LIMIT: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Directory whose subdirectories are sessions.
    pub data_root: PathBuf,
    /// Force offline providers.
    pub offline: bool,
    pub sync_frame_limit: usize,
    /// Built UI bundle served at `/`.
    pub static_dir: Option<PathBuf>,
    pub pipeline: PipelineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            data_root: PathBuf::from("sessions"),
            offline: false,
            sync_frame_limit: SYNC_FRAME_LIMIT,
            static_dir: None,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Applies `ETHOKIT_PORT`, `ETHOKIT_DATA_ROOT`, `ETHOKIT_OFFLINE` and
    /// `ETHOKIT_PROVIDER_ENDPOINT`.
    pub fn apply_env(&mut self) {
        if let Some(p) = std::env::var("ETHOKIT_PORT").ok().and_then(|v| v.parse().ok()) {
            self.port = p;
        }
        if let Ok(d) = std::env::var("ETHOKIT_DATA_ROOT") {
            self.data_root = PathBuf::from(d);
        }
        if let Ok(v) = std::env::var("ETHOKIT_OFFLINE") {
            self.offline = matches!(v.as_str(), "1" | "true" | "yes");
        }
        if let Ok(e) = std::env::var("ETHOKIT_PROVIDER_ENDPOINT") {
            self.pipeline.provider_settings.endpoint = Some(e);
        }
    }

    pub fn effective_pipeline(&self) -> PipelineConfig {
        if self.offline {
            self.pipeline.clone().offline()
        } else {
            self.pipeline.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Done { result: serde_json::Value },
    Failed { code: u16, error: String },
}

pub struct AppState {
    pub config: ServiceConfig,
    pub sessions: BTreeMap<String, Arc<SessionHandle>>,
    pub jobs: Mutex<BTreeMap<u64, JobStatus>>,
    pub next_job: AtomicU64,
}

impl AppState {
    /// Opens every subdirectory of the data root that holds a `session.toml`.
    pub fn load(config: ServiceConfig) -> Result<Self, String> {
        let mut sessions = BTreeMap::new();
        let entries = std::fs::read_dir(&config.data_root).map_err(|e| format!("{}: {e}", config.data_root.display()))?;
        let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        dirs.sort();
        for dir in dirs {
            if dir.join("session.toml").exists() {
                let h = SessionHandle::open(&dir, config.effective_pipeline()).map_err(|e| e.to_string())?;
                sessions.insert(h.session.config.id.clone(), Arc::new(h));
            }
        }
        Ok(Self { config, sessions, jobs: Mutex::new(BTreeMap::new()), next_job: AtomicU64::new(1) })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let mut r = Router::new()
        .route("/sessions", get(api::list_sessions))
        .route("/sessions/:id", get(api::session_info))
        .route("/sessions/:id/frames/:index", get(api::frame))
        .route("/sessions/:id/frames/:index/image/:camera", get(api::frame_image))
        .route("/sessions/:id/ethogram", get(api::ethogram))
        .route("/sessions/:id/reports/:name", get(api::report))
        .route("/sessions/:id/log", get(api::log))
        .route("/sessions/:id/search", post(api::search))
        .route("/sessions/:id/cluster", post(api::cluster))
        .route("/sessions/:id/finegrained", post(api::finegrained))
        .route("/sessions/:id/anomaly", post(api::anomaly))
        .route("/sessions/:id/phenotype/predict", post(api::predict))
        .route("/sessions/:id/chat", post(api::chat))
        .route("/jobs/:id", get(api::job));
    if let Some(dir) = &state.config.static_dir {
        r = r.fallback_service(tower_http::services::ServeDir::new(dir));
    }
    r.with_state(state)
}

pub async fn serve(config: ServiceConfig) -> Result<(), String> {
    let addr = format!("{}:{}", config.bind, config.port);
    let state = Arc::new(AppState::load(config)?);
    log::info!("serving {} sessions on {addr}", state.sessions.len());
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| format!("{addr}: {e}"))?;
    axum::serve(listener, router(state)).await.map_err(|e| e.to_string())
}
