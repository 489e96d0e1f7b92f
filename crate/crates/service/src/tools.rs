//! Typed tools shared by the REST endpoints and the chat router.

use std::collections::BTreeMap;
use std::sync::Arc;

use ethokit::analytics::{search, ReferenceMode};
use ethokit::anomaly::NoveltyReport;
use ethokit::clustering::{cluster, report, ClusterParams, MergerRegistry};
use ethokit::pipeline::stages::{self, FineGrainedArtifact, PredictionArtifact, Stage};
use ethokit::pipeline::{self, PipelineConfig, PipelineError, Result};
use ethokit::provider::offline::ROUTE_TASK;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::session::{InvocationRecord, SessionHandle};

fn default_n() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchArgs {
    pub query: String,
    #[serde(default = "default_n")]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterArgs {
    pub theta_c: Option<usize>,
    pub theta_e: Option<usize>,
    /// Cluster only these frames; the session clustering is left alone.
    pub frames: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FineGrainedArgs {
    pub assigner: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyArgs {
    pub contamination: Option<f64>,
    pub runs: Option<usize>,
    pub quorum: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictArgs {
    pub mode: Option<ReferenceMode>,
}

/// One tool call as logged: `{"tool": name, "args": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tool", content = "args", rename_all = "snake_case")]
pub enum Tool {
    Search(SearchArgs),
    Cluster(#[serde(default)] ClusterArgs),
    Finegrained(#[serde(default)] FineGrainedArgs),
    Anomaly(#[serde(default)] AnomalyArgs),
    PhenotypePredict(#[serde(default)] PredictArgs),
}

impl Tool {
    pub fn name(&self) -> &'static str {
        match self {
            Tool::Search(_) => "search",
            Tool::Cluster(_) => "cluster",
            Tool::Finegrained(_) => "finegrained",
            Tool::Anomaly(_) => "anomaly",
            Tool::PhenotypePredict(_) => "phenotype_predict",
        }
    }

    /// Search only reads the snapshot.
    pub fn mutates(&self) -> bool {
        !matches!(self, Tool::Search(_))
    }

    fn input_summary(&self) -> String {
        match self {
            Tool::Search(a) => format!("query={:?} n={}", a.query, a.n),
            Tool::Cluster(a) => format!(
                "theta_c={:?} theta_e={:?} frames={}",
                a.theta_c,
                a.theta_e,
                a.frames.as_ref().map_or("all".to_string(), |f| f.len().to_string())
            ),
            Tool::Finegrained(a) => format!("assigner={:?}", a.assigner),
            Tool::Anomaly(a) => {
                format!("contamination={:?} runs={:?} quorum={:?} seed={:?}", a.contamination, a.runs, a.quorum, a.seed)
            }
            Tool::PhenotypePredict(a) => format!("mode={:?}", a.mode),
        }
    }

    /// Frames the call works through; large calls run as jobs.
    pub fn workload(&self, handle: &SessionHandle) -> usize {
        match self {
            Tool::Cluster(ClusterArgs { frames: Some(f), .. }) => f.len(),
            Tool::PhenotypePredict(_) => 0,
            _ => handle.snapshot().descriptions.len(),
        }
    }
}

/// Result of one tool call before logging.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolOutcome {
    pub output: Value,
    pub output_summary: String,
    /// Session-relative paths written.
    pub artifacts: Vec<String>,
}

fn rel(name: &str) -> String {
    format!("{}/{name}", pipeline::ARTIFACTS_DIR)
}

fn outputs(m: &pipeline::RunManifest) -> Vec<String> {
    m.outputs.keys().cloned().collect()
}

/// Runs a tool against the session files. Blocking.
pub fn run_tool(handle: &SessionHandle, config: &PipelineConfig, tool: &Tool) -> Result<ToolOutcome> {
    let session = &handle.session;
    match tool {
        Tool::Search(a) => {
            if a.query.trim().is_empty() {
                return Err(PipelineError::Validation("query is empty".into()));
            }
            if a.n == 0 {
                return Err(PipelineError::Validation("n must be at least 1".into()));
            }
            let snap = handle.snapshot();
            let store = snap.store.clone().ok_or_else(|| PipelineError::Missing {
                path: stages::EMBEDDINGS.into(),
                hint: "run `embed` first".into(),
            })?;
            let provider = stages::session_provider(session, config)?;
            let hits = search(&a.query, &store, provider.as_ref())?;
            let top: Vec<Value> = hits
                .iter()
                .take(a.n)
                .enumerate()
                .map(|(i, h)| {
                    json!({
                        "rank": i + 1,
                        "frame_index": h.frame_id,
                        "time_s": session.time_of(h.frame_id),
                        "similarity": h.similarity,
                        "overall": snap.descriptions.get(&h.frame_id).map(|d| d.overall.clone()),
                        "behavior": snap.behaviors.get(&h.frame_id),
                    })
                })
                .collect();
            let summary = hits
                .iter()
                .take(a.n)
                .map(|h| format!("{}:{:.6}", h.frame_id, h.similarity))
                .collect::<Vec<_>>()
                .join(" ");
            Ok(ToolOutcome { output: json!({ "hits": top, "ranked": hits.len() }), output_summary: summary, artifacts: vec![] })
        }
        Tool::Cluster(a) => {
            let mut config = config.clone();
            config.cluster.theta_c = a.theta_c.unwrap_or(config.cluster.theta_c);
            config.cluster.theta_e = a.theta_e.unwrap_or(config.cluster.theta_e);
            match &a.frames {
                Some(frames) => cluster_subset(handle, &config, frames),
                None => {
                    let m = pipeline::run(session, &config, &Stage::Cluster)?;
                    let mut artifacts = outputs(&m);
                    let e = pipeline::run(session, &config, &Stage::Ethogram)?;
                    artifacts.extend(outputs(&e));
                    let summary = format!("clusters={} sizes={}", m.summary["clusters"], m.summary["sizes"]);
                    Ok(ToolOutcome { output: m.summary, output_summary: summary, artifacts })
                }
            }
        }
        Tool::Finegrained(a) => {
            let mut config = config.clone();
            if let Some(name) = &a.assigner {
                config.finegrained.assigner = name.clone();
            }
            let m = pipeline::run(session, &config, &Stage::FineGrained)?;
            let art: FineGrainedArtifact =
                serde_json::from_str(&std::fs::read_to_string(session.artifact(stages::FINEGRAINED_DETAIL))?)?;
            let rows = art.labels.rows().len();
            let summary = format!("frames={} labels={} new_keys={}", art.labels.frames.len(), rows, art.new_keys.len());
            Ok(ToolOutcome { artifacts: outputs(&m), output: m.summary, output_summary: summary })
        }
        Tool::Anomaly(a) => {
            let mut config = config.clone();
            config.anomaly.contamination = a.contamination.unwrap_or(config.anomaly.contamination);
            config.anomaly.runs = a.runs.unwrap_or(config.anomaly.runs);
            config.anomaly.quorum = a.quorum.unwrap_or(config.anomaly.quorum);
            config.seed = a.seed.unwrap_or(config.seed);
            let m = pipeline::run(session, &config, &Stage::Anomaly)?;
            let rep: NoveltyReport = serde_json::from_str(&std::fs::read_to_string(session.artifact(stages::NOVELTY))?)?;
            let flagged: Vec<Value> = rep
                .flagged
                .iter()
                .map(|f| {
                    json!({
                        "frame_index": f.frame_id,
                        "time_s": session.time_of(f.frame_id),
                        "score": f.score,
                        "consensus": f.consensus,
                        "description": f.description,
                    })
                })
                .collect();
            let summary =
                format!("flagged={:?}", rep.flagged.iter().map(|f| f.frame_id).collect::<Vec<_>>());
            Ok(ToolOutcome {
                output: json!({ "frames": rep.frames, "flagged": flagged, "params": rep.params }),
                output_summary: summary,
                artifacts: outputs(&m),
            })
        }
        Tool::PhenotypePredict(a) => {
            let mut config = config.clone();
            if let Some(mode) = a.mode {
                config.predict.mode = mode;
            }
            let m = pipeline::run(session, &config, &Stage::Predict)?;
            let art: PredictionArtifact =
                serde_json::from_str(&std::fs::read_to_string(session.artifact(stages::PREDICTION))?)?;
            let summary = format!(
                "predicted={} loo_accuracy={:.4}",
                art.session.predicted, art.leave_one_out_accuracy
            );
            Ok(ToolOutcome { output: serde_json::to_value(&art)?, output_summary: summary, artifacts: outputs(&m) })
        }
    }
}

/// Contents of `cluster_subset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSubset {
    pub frames: Vec<u64>,
    pub assignments: Vec<usize>,
    pub behaviors: BTreeMap<usize, String>,
    pub report: ethokit::clustering::ClusterReport,
}

pub const CLUSTER_SUBSET: &str = "cluster_subset.json";

fn cluster_subset(handle: &SessionHandle, config: &PipelineConfig, frames: &[u64]) -> Result<ToolOutcome> {
    let session = &handle.session;
    let (store, _) = stages::load_store(session)?;
    let (descs, _) = stages::load_descriptions(session)?;
    let (ids, vectors) = stages::aligned(&store, &descs);
    let wanted: std::collections::BTreeSet<u64> = frames.iter().copied().collect();
    let missing: Vec<u64> = wanted.iter().copied().filter(|f| !descs.contains_key(f) || store.get(*f).is_none()).collect();
    if !missing.is_empty() {
        return Err(PipelineError::Validation(format!("frames without embeddings: {missing:?}")));
    }
    let (ids, vectors): (Vec<u64>, Vec<Vec<f64>>) =
        ids.into_iter().zip(vectors).filter(|(f, _)| wanted.contains(f)).unzip();
    let keywords: Vec<Vec<String>> = ids.iter().map(|f| descs[f].description().keywords).collect();
    let provider = stages::session_provider(session, config)?;
    let merger = MergerRegistry::with_builtins().create(&config.cluster.merger, Some(provider))?;
    let params = ClusterParams {
        theta_c: config.cluster.theta_c,
        theta_e: config.cluster.theta_e,
        pre_projection: config.cluster.pre_projection,
    };
    let model = cluster(&ids, &vectors, &keywords, params, merger.as_ref())?;
    let subset = ClusterSubset {
        frames: ids,
        assignments: model.assignments.clone(),
        behaviors: model.behavior_names(),
        report: report(&model, &vectors)?,
    };
    std::fs::write(session.artifact(CLUSTER_SUBSET), serde_json::to_string_pretty(&subset)? + "\n")?;
    let sizes = model.sizes();
    let summary = format!("subset clusters={} sizes={:?}", sizes.len(), sizes);
    Ok(ToolOutcome {
        output: json!({
            "frames": subset.frames.len(),
            "clusters": sizes.len(),
            "behaviors": subset.behaviors,
        }),
        output_summary: summary,
        artifacts: vec![rel(CLUSTER_SUBSET)],
    })
}

/// Runs a tool under the session's write lock, swaps in a fresh snapshot
/// when it changed files, and appends the call to the invocation log.
pub async fn invoke(handle: Arc<SessionHandle>, tool: Tool) -> Result<(Value, InvocationRecord)> {
    let _guard = handle.write.lock().await;
    let h = handle.clone();
    let t = tool.clone();
    let outcome = tokio::task::spawn_blocking(move || run_tool(&h, &h.config, &t))
        .await
        .map_err(|e| PipelineError::Runtime(e.to_string()))??;
    let revision = if tool.mutates() {
        let h = handle.clone();
        tokio::task::spawn_blocking(move || h.reload())
            .await
            .map_err(|e| PipelineError::Runtime(e.to_string()))??
            .revision
    } else {
        handle.snapshot().revision
    };
    let record = handle.append_log(InvocationRecord {
        seq: 0,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        tool: tool.name().into(),
        input: serde_json::to_value(&tool)?,
        input_summary: tool.input_summary(),
        output_summary: outcome.output_summary.clone(),
        artifacts: outcome.artifacts.clone(),
        revision,
    })?;
    Ok((json!({ "revision": revision, "seq": record.seq, "tool": tool.name(), "result": outcome.output }), record))
}

/// Parses the router's answer to a chat message.
pub fn route(handle: &SessionHandle, message: &str) -> Result<Tool> {
    if message.trim().is_empty() {
        return Err(PipelineError::Validation("message is empty".into()));
    }
    let provider = stages::session_provider(&handle.session, &handle.config)?;
    let prompt = format!(
        "{ROUTE_TASK}\nTOOLS: search(query, n), cluster(theta_c, theta_e, frames), finegrained(assigner), \
         anomaly(contamination, runs, quorum), phenotype_predict(mode)\nMESSAGE: {}",
        message.replace('\n', " ")
    );
    let answer = provider.complete(&prompt)?;
    let body = match (answer.find('{'), answer.rfind('}')) {
        (Some(a), Some(b)) if a < b => &answer[a..=b],
        _ => return Err(PipelineError::Runtime(format!("router answer has no JSON object: {answer:?}"))),
    };
    serde_json::from_str(body).map_err(|e| PipelineError::Runtime(format!("router answer: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayResult {
    pub seq: u64,
    pub tool: String,
    pub expected: String,
    pub actual: Option<String>,
    pub error: Option<String>,
    pub matches: bool,
}

/// Re-executes logged calls in order and compares their output summaries.
/// Replayed calls are not logged again.
pub async fn replay(handle: Arc<SessionHandle>, records: Vec<InvocationRecord>) -> Vec<ReplayResult> {
    let _guard = handle.write.lock().await;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let h = handle.clone();
        let input = r.input.clone();
        let res = tokio::task::spawn_blocking(move || {
            let tool: Tool = serde_json::from_value(input)?;
            let outcome = run_tool(&h, &h.config, &tool)?;
            if tool.mutates() {
                h.reload()?;
            }
            Ok::<_, PipelineError>(outcome)
        })
        .await
        .map_err(|e| PipelineError::Runtime(e.to_string()))
        .and_then(|x| x);
        let (actual, error) = match res {
            Ok(o) => (Some(o.output_summary), None),
            Err(e) => (None, Some(e.to_string())),
        };
        out.push(ReplayResult {
            seq: r.seq,
            tool: r.tool,
            matches: actual.as_deref() == Some(r.output_summary.as_str()),
            expected: r.output_summary,
            actual,
            error,
        });
    }
    out
}
