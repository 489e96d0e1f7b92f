//! Session directories, stage runners and run manifests.
//!
//! A session directory holds `session.toml` plus the inputs it names; every
//! stage reads and writes files under `artifacts/` and records one manifest
//! in `artifacts/manifests/<stage>.json`.

mod io;
pub mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{file_sha256, read_jsonl, write_jsonl, DescriptionRecord, FrameRecord};
pub use stages::{Stage, StageOutput};

use crate::analytics::PredictOptions;
use crate::anomaly::{AnomalyParams, ForestParams};
use crate::kinematics::{TriangulationOptions, VelocityMode};
use crate::provider::{Provider, ProviderRegistry, ProviderSettings};

pub const ARTIFACTS_DIR: &str = "artifacts";
pub const MANIFESTS_DIR: &str = "manifests";

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad configuration, arguments or input contents.
    #[error("validation error: {0}")]
    Validation(String),
    #[error("missing artifact {path}: {hint}")]
    Missing { path: String, hint: String },
    /// The target exists but a prerequisite stage has not run.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl PipelineError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) | PipelineError::Missing { .. } => 2,
            PipelineError::Runtime(_) => 1,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(std::io::Error, serde_json::Error, csv::Error, crate::provider::ProviderError);

impl From<crate::kinematics::KinematicsError> for PipelineError {
    fn from(e: crate::kinematics::KinematicsError) -> Self {
        use crate::kinematics::KinematicsError::*;
        match e {
            InvalidCamera { .. } | Calibration(_) | UnknownCamera(_) | Parameter(_) => PipelineError::Validation(e.to_string()),
            _ => PipelineError::Runtime(e.to_string()),
        }
    }
}

impl From<crate::annotation::AnnotationError> for PipelineError {
    fn from(e: crate::annotation::AnnotationError) -> Self {
        PipelineError::Validation(e.to_string())
    }
}

impl From<crate::embedding::EmbeddingError> for PipelineError {
    fn from(e: crate::embedding::EmbeddingError) -> Self {
        match e {
            crate::embedding::EmbeddingError::Parameter(_) => PipelineError::Validation(e.to_string()),
            _ => PipelineError::Runtime(e.to_string()),
        }
    }
}

impl From<crate::clustering::ClusteringError> for PipelineError {
    fn from(e: crate::clustering::ClusteringError) -> Self {
        use crate::clustering::ClusteringError::*;
        match e {
            Parameter(_) | Infeasible { .. } => PipelineError::Validation(e.to_string()),
            _ => PipelineError::Runtime(e.to_string()),
        }
    }
}

impl From<crate::finegrained::FineGrainedError> for PipelineError {
    fn from(e: crate::finegrained::FineGrainedError) -> Self {
        use crate::finegrained::FineGrainedError::*;
        match e {
            Lexicon(_) | Parameter(_) => PipelineError::Validation(e.to_string()),
            _ => PipelineError::Runtime(e.to_string()),
        }
    }
}

impl From<crate::anomaly::AnomalyError> for PipelineError {
    fn from(e: crate::anomaly::AnomalyError) -> Self {
        PipelineError::Validation(e.to_string())
    }
}

impl From<crate::analytics::AnalyticsError> for PipelineError {
    fn from(e: crate::analytics::AnalyticsError) -> Self {
        match e {
            crate::analytics::AnalyticsError::Parameter(_) => PipelineError::Validation(e.to_string()),
            _ => PipelineError::Runtime(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// `session.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub id: String,
    pub subject: String,
    #[serde(default)]
    pub group: Option<String>,
    /// Capture rate of the keypoint stream.
    pub fps: f64,
    pub duration_s: f64,
    /// Annotation sampling rate in frames per second.
    pub target_rate: f64,
    /// The two lateral views sent to the describer, left then right.
    pub description_views: Vec<String>,
    pub calibration: String,
    pub keypoints: String,
    /// Reference cohort for phenotype prediction.
    #[serde(default)]
    pub references: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub root: PathBuf,
    pub config: SessionConfig,
}

impl Session {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("session.toml");
        if !path.exists() {
            return Err(PipelineError::Missing {
                path: path.display().to_string(),
                hint: "not a session directory".into(),
            });
        }
        let text = std::fs::read_to_string(&path)?;
        let config: SessionConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        if config.description_views.len() != 2 {
            return Err(PipelineError::Validation("description_views must name exactly two cameras".into()));
        }
        Ok(Self { root: root.to_path_buf(), config })
    }

    pub fn input(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn artifacts(&self) -> PathBuf {
        self.root.join(ARTIFACTS_DIR)
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.artifacts().join(name)
    }

    pub fn manifest_path(&self, stage: &str) -> PathBuf {
        self.artifacts().join(MANIFESTS_DIR).join(format!("{stage}.json"))
    }

    /// Sampling stride in raw frames.
    pub fn stride(&self) -> u64 {
        (self.config.fps / self.config.target_rate).round().max(1.0) as u64
    }

    pub fn time_of(&self, frame_index: u64) -> f64 {
        frame_index as f64 / self.config.fps
    }

    /// Path of an artifact that a previous stage must have produced.
    pub fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.artifact(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(PipelineError::Missing { path: p.display().to_string(), hint: format!("run `{producer}` first") })
        }
    }

    pub fn require_input(&self, name: &str) -> Result<PathBuf> {
        let p = self.input(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(PipelineError::Missing { path: p.display().to_string(), hint: "session input not found".into() })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub theta_c: usize,
    pub theta_e: usize,
    pub pre_projection: Option<usize>,
    /// Merger registry name.
    pub merger: String,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { theta_c: 8, theta_e: 50, pre_projection: None, merger: "offline".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineGrainedConfig {
    /// Assigner registry name.
    pub assigner: String,
    /// Starting lexicon; the shipped seed lexicon when unset.
    pub lexicon: Option<PathBuf>,
}

impl Default for FineGrainedConfig {
    fn default() -> Self {
        Self { assigner: "offline".into(), lexicon: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyConfig {
    pub n_estimators: usize,
    pub subsample: usize,
    pub contamination: f64,
    pub runs: usize,
    pub quorum: f64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        let d = AnomalyParams::default();
        Self {
            n_estimators: d.forest.n_estimators,
            subsample: d.forest.subsample,
            contamination: d.contamination,
            runs: d.runs,
            quorum: d.quorum,
        }
    }
}

/// Pipeline configuration, read from the `--config` TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Provider registry name: `offline`, `http` or `replay`.
    pub provider: String,
    pub provider_settings: ProviderSettings,
    /// Root seed; stage seeds derive from it.
    pub seed: u64,
    /// Worker threads per stage; 0 uses every core.
    pub jobs: usize,
    pub min_score: f64,
    pub velocity_mode: VelocityMode,
    pub triangulation: TriangulationOptions,
    /// Describe calls in flight during annotation.
    pub annotate_concurrency: usize,
    pub cluster: ClusterConfig,
    pub finegrained: FineGrainedConfig,
    pub anomaly: AnomalyConfig,
    /// Ethogram window length in seconds.
    pub window_s: f64,
    pub search_n: usize,
    pub predict: PredictOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            provider: "offline".into(),
            provider_settings: ProviderSettings::default(),
            seed: 0,
            jobs: 0,
            min_score: crate::annotation::DEFAULT_MIN_SCORE,
            velocity_mode: VelocityMode::PerSecond,
            triangulation: TriangulationOptions::default(),
            annotate_concurrency: 8,
            cluster: ClusterConfig::default(),
            finegrained: FineGrainedConfig::default(),
            anomaly: AnomalyConfig::default(),
            window_s: 20.0,
            search_n: 5,
            predict: PredictOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Validation(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| PipelineError::Validation(format!("config {}: {e}", path.display())))
    }

    /// Forces the offline provider.
    pub fn offline(mut self) -> Self {
        self.provider = "offline".into();
        self
    }

    pub fn anomaly_params(&self) -> AnomalyParams {
        AnomalyParams {
            forest: ForestParams {
                n_estimators: self.anomaly.n_estimators,
                subsample: self.anomaly.subsample,
                seed: derive_seed(self.seed, "anomaly"),
            },
            contamination: self.anomaly.contamination,
            runs: self.anomaly.runs,
            quorum: self.anomaly.quorum,
        }
    }

    pub fn provider(&self) -> Result<Arc<dyn Provider>> {
        ProviderRegistry::with_builtins().create(&self.provider, &self.provider_settings).map_err(|e| match e {
            crate::provider::ProviderError::UnknownProvider(_) | crate::provider::ProviderError::Parameter(_) => {
                PipelineError::Validation(e.to_string())
            }
            e => PipelineError::Runtime(e.to_string()),
        })
    }
}

/// Seed of a named stage. The anomaly stage uses the root seed itself so
/// that `--seed s` means forest seeds `s, s + 1, …`.
pub fn derive_seed(root: u64, stage: &str) -> u64 {
    match stage {
        "anomaly" => root,
        other => {
            let mut h = fnv::FnvHasher::default();
            std::hash::Hasher::write(&mut h, other.as_bytes());
            root ^ std::hash::Hasher::finish(&h)
        }
    }
}

/// One record per command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub started_at: String,
    pub wall_time_s: f64,
    pub session: String,
    pub config: serde_json::Value,
    /// Session-relative path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Role → provider identity.
    pub providers: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub summary: serde_json::Value,
}

fn relative(session: &Session, p: &Path) -> String {
    p.strip_prefix(&session.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn hashes(session: &Session, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((relative(session, p), file_sha256(p)?))).collect()
}

/// Runs one stage with `config.jobs` worker threads and writes its manifest.
pub fn run(session: &Session, config: &PipelineConfig, stage: &Stage) -> Result<RunManifest> {
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let clock = Instant::now();
    std::fs::create_dir_all(session.artifacts().join(MANIFESTS_DIR))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if config.jobs > 0 {
        builder = builder.num_threads(config.jobs);
    }
    let pool = builder.build().map_err(|e| PipelineError::Runtime(e.to_string()))?;
    let out = pool.install(|| stages::execute(session, config, stage))?;
    let mut seeds = BTreeMap::from([("root".to_string(), config.seed)]);
    seeds.extend(out.seeds.clone());
    let manifest = RunManifest {
        command: stage.name().into(),
        started_at,
        wall_time_s: clock.elapsed().as_secs_f64(),
        session: session.config.id.clone(),
        config: serde_json::json!({ "pipeline": config, "session": session.config, "args": stage.args() }),
        inputs: hashes(session, &out.inputs)?,
        outputs: hashes(session, &out.outputs)?,
        providers: out.providers.clone(),
        seeds,
        summary: out.summary.clone(),
    };
    std::fs::write(session.manifest_path(stage.name()), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// The composable chain from raw keypoints to phenotype prediction.
pub const CHAIN: [&str; 10] =
    ["ingest", "triangulate", "velocity", "annotate", "embed", "cluster", "finegrained", "anomaly", "profile", "predict"];

/// Every stage of the chain plus `ethogram`, then a default search.
pub fn run_all(session: &Session, config: &PipelineConfig, query: &str) -> Result<Vec<RunManifest>> {
    let mut out = Vec::new();
    for name in CHAIN {
        if name == "profile" {
            out.push(run(session, config, &Stage::Ethogram)?);
        }
        out.push(run(session, config, &Stage::parse_simple(name).expect("chain names are stages"))?);
    }
    out.push(run(session, config, &Stage::Search { query: query.into(), n: config.search_n })?);
    Ok(out)
}
