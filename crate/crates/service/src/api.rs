use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use ethokit::analytics::{window_proportions, EthogramTrack, Sample};
use ethokit::pipeline::stages::{self, UNANNOTATED};
use ethokit::pipeline::PipelineError;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::session::SessionHandle;
use crate::tools::{self, ClusterArgs, SearchArgs, Tool};
use crate::{render, AppState, JobStatus};

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match e {
            PipelineError::Validation(_) => StatusCode::BAD_REQUEST,
            PipelineError::Missing { .. } => StatusCode::CONFLICT,
            PipelineError::Runtime(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn not_found(what: String) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, what)
}

type ApiResult<T> = Result<T, ApiError>;

fn handle(state: &AppState, id: &str) -> ApiResult<Arc<SessionHandle>> {
    state.sessions.get(id).cloned().ok_or_else(|| not_found(format!("unknown session {id:?}")))
}

pub async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Value> {
    let list: Vec<Value> = state
        .sessions
        .values()
        .map(|h| {
            let snap = h.snapshot();
            json!({
                "id": h.session.config.id,
                "subject": h.session.config.subject,
                "group": h.session.config.group,
                "frames": snap.frames.len(),
                "revision": snap.revision,
            })
        })
        .collect();
    Json(json!({ "sessions": list }))
}

pub async fn session_info(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let h = handle(&state, &id)?;
    let snap = h.snapshot();
    let artifacts: Vec<&str> = REPORTS.iter().copied().filter(|n| h.session.artifact(n).exists()).collect();
    Ok(Json(json!({
        "id": h.session.config.id,
        "config": h.session.config,
        "revision": snap.revision,
        "frames": snap.frames.len(),
        "annotated": snap.descriptions.len(),
        "embedded": snap.store.as_ref().map_or(0, |s| s.len()),
        "cameras": snap.rig.as_ref().map(|r| r.cameras.iter().map(|c| c.id.clone()).collect::<Vec<_>>()),
        "reports": artifacts,
    })))
}

/// Frame by position among the sampled frames.
pub async fn frame(State(state): State<Arc<AppState>>, Path((id, index)): Path<(String, usize)>) -> ApiResult<Json<Value>> {
    let h = handle(&state, &id)?;
    let snap = h.snapshot();
    let f = snap
        .frames
        .get(index)
        .ok_or_else(|| not_found(format!("frame {index} outside 0..{}", snap.frames.len())))?;
    let pose = snap.poses.get(&f.frame_index).map(|p| {
        json!({
            "residual_rms": p.residual_rms,
            "views_used": p.views_used,
            "valid_points": p.points.iter().filter(|x| x.is_some()).count(),
        })
    });
    Ok(Json(json!({
        "revision": snap.revision,
        "index": index,
        "frames": snap.frames.len(),
        "frame_index": f.frame_index,
        "time_s": f.time_s,
        "view_image_refs": f.view_image_refs,
        "description": snap.descriptions.get(&f.frame_index),
        "behavior": snap.behaviors.get(&f.frame_index),
        "finegrained": snap.fine_labels(f.frame_index),
        "novelty_score": snap.novelty.get(&f.frame_index),
        "pose": pose,
    })))
}

pub async fn frame_image(
    State(state): State<Arc<AppState>>,
    Path((id, index, camera)): Path<(String, usize, String)>,
) -> ApiResult<Response> {
    let h = handle(&state, &id)?;
    let snap = h.snapshot();
    let f = snap.frames.get(index).ok_or_else(|| not_found(format!("frame {index} outside 0..{}", snap.frames.len())))?;
    let rig = snap
        .rig
        .as_ref()
        .ok_or_else(|| ApiError(StatusCode::CONFLICT, "calibration unavailable".into()))?;
    let cam = rig.get(&camera).ok_or_else(|| not_found(format!("unknown camera {camera:?}")))?;
    let file = h.session.root.join(stages::image_ref(&camera, f.frame_index));
    let bytes = match tokio::fs::read(&file).await {
        Ok(b) => b,
        Err(_) => render::render_pose(cam, snap.poses.get(&f.frame_index)),
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
pub struct EthogramQuery {
    window_s: Option<f64>,
}

pub async fn ethogram(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EthogramQuery>,
) -> ApiResult<Json<Value>> {
    let h = handle(&state, &id)?;
    let snap = h.snapshot();
    if snap.frames.is_empty() {
        return Err(PipelineError::Missing { path: stages::FRAMES.into(), hint: "run `ingest` first".into() }.into());
    }
    let window_s = q.window_s.unwrap_or(h.config.window_s);
    let samples: Vec<Sample> = snap
        .frames
        .iter()
        .map(|f| Sample {
            time_s: f.time_s,
            frame_id: f.frame_index,
            label: snap.behaviors.get(&f.frame_index).cloned().unwrap_or_else(|| UNANNOTATED.to_string()),
        })
        .collect();
    let stride_s = h.session.stride() as f64 / h.session.config.fps;
    let track = EthogramTrack::new(&h.session.config.subject, stride_s, samples).map_err(PipelineError::from)?;
    let windows = window_proportions(&track, window_s).map_err(PipelineError::from)?;
    Ok(Json(json!({
        "revision": snap.revision,
        "window_s": window_s,
        "proportions": track.proportions(),
        "windows": windows,
    })))
}

/// Artifacts readable through `/reports/:name`.
const REPORTS: [&str; 16] = [
    stages::CLUSTERS,
    stages::CLUSTER_REPORT,
    stages::FINEGRAINED,
    stages::FINEGRAINED_DETAIL,
    stages::LEXICON,
    stages::INFOCARD,
    stages::NOVELTY,
    stages::SEARCH,
    stages::ETHOGRAM,
    stages::WINDOWS,
    stages::PROPORTIONS,
    stages::OCCUPANCY,
    stages::PROFILE,
    stages::PREDICTION,
    stages::PREDICTION_MATRIX,
    tools::CLUSTER_SUBSET,
];

pub async fn report(State(state): State<Arc<AppState>>, Path((id, name)): Path<(String, String)>) -> ApiResult<Response> {
    let h = handle(&state, &id)?;
    if !REPORTS.contains(&name.as_str()) {
        return Err(not_found(format!("unknown report {name:?}")));
    }
    let body = tokio::fs::read(h.session.artifact(&name))
        .await
        .map_err(|_| ApiError(StatusCode::CONFLICT, format!("{name} has not been produced yet")))?;
    let ctype = match name.rsplit('.').next() {
        Some("json") => "application/json",
        Some("csv") => "text/csv",
        _ => "text/plain",
    };
    Ok(([(header::CONTENT_TYPE, ctype)], body).into_response())
}

pub async fn log(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let h = handle(&state, &id)?;
    Ok(Json(json!({ "invocations": h.read_log()? })))
}

pub async fn job(State(state): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<Json<JobStatus>> {
    let jobs = state.jobs.lock().expect("jobs lock");
    jobs.get(&id).cloned().map(Json).ok_or_else(|| not_found(format!("unknown job {id}")))
}

/// Runs `tool` inline, or as a background job when its input is larger
/// than the configured limit.
async fn dispatch(state: Arc<AppState>, h: Arc<SessionHandle>, tool: Tool) -> ApiResult<Response> {
    if tool.workload(&h) > state.config.sync_frame_limit {
        let id = state.next_job.fetch_add(1, Ordering::SeqCst);
        state.jobs.lock().expect("jobs lock").insert(id, JobStatus::Running);
        let st = state.clone();
        tokio::spawn(async move {
            let status = match tools::invoke(h, tool).await {
                Ok((v, _)) => JobStatus::Done { result: v },
                Err(e) => {
                    let ApiError(code, error) = ApiError::from(e);
                    JobStatus::Failed { code: code.as_u16(), error }
                }
            };
            st.jobs.lock().expect("jobs lock").insert(id, status);
        });
        return Ok((StatusCode::ACCEPTED, Json(json!({ "job": id, "status": format!("/jobs/{id}") }))).into_response());
    }
    let (v, _) = tools::invoke(h, tool).await?;
    Ok(Json(v).into_response())
}

fn body<T: serde::de::DeserializeOwned + Default>(raw: Option<Json<Value>>) -> ApiResult<T> {
    match raw {
        None => Ok(T::default()),
        Some(Json(v)) => serde_json::from_value(v).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string())),
    }
}

pub async fn search(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(raw): Json<Value>,
) -> ApiResult<Response> {
    let h = handle(&state, &id)?;
    let args: SearchArgs = serde_json::from_value(raw).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    if args.query.trim().is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "query is empty".into()));
    }
    dispatch(state, h, Tool::Search(args)).await
}

pub async fn cluster(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    raw: Option<Json<Value>>,
) -> ApiResult<Response> {
    let h = handle(&state, &id)?;
    let args: ClusterArgs = body(raw)?;
    dispatch(state, h, Tool::Cluster(args)).await
}

pub async fn finegrained(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    raw: Option<Json<Value>>,
) -> ApiResult<Response> {
    let h = handle(&state, &id)?;
    dispatch(state, h, Tool::Finegrained(body(raw)?)).await
}

pub async fn anomaly(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    raw: Option<Json<Value>>,
) -> ApiResult<Response> {
    let h = handle(&state, &id)?;
    dispatch(state, h, Tool::Anomaly(body(raw)?)).await
}

pub async fn predict(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    raw: Option<Json<Value>>,
) -> ApiResult<Response> {
    let h = handle(&state, &id)?;
    if !h.session.artifact(stages::PROFILE).exists() {
        return Err(ApiError(StatusCode::CONFLICT, "no phenotype profile; run `profile` first".into()));
    }
    dispatch(state, h, Tool::PhenotypePredict(body(raw)?)).await
}

#[derive(Debug, Deserialize)]
pub struct ChatRequest {
    message: String,
}

/// Routes a free-text message to one tool and runs it.
pub async fn chat(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ChatRequest>,
) -> ApiResult<Response> {
    let h = handle(&state, &id)?;
    let hh = h.clone();
    let tool = tokio::task::spawn_blocking(move || tools::route(&hh, &req.message))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    if let Tool::PhenotypePredict(_) = tool {
        if !h.session.artifact(stages::PROFILE).exists() {
            return Err(ApiError(StatusCode::CONFLICT, "no phenotype profile; run `profile` first".into()));
        }
    }
    let routed = serde_json::to_value(&tool).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let (v, _) = tools::invoke(h, tool).await?;
    Ok(Json(json!({ "routed": routed, "response": v })).into_response())
}
