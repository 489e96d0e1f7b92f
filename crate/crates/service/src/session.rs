use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, RwLock};

use ethokit::annotation::BodyPart;
use ethokit::clustering::ClusterReport;
use ethokit::embedding::VectorStore;
use ethokit::kinematics::{CameraRig, Pose3D};
use ethokit::pipeline::stages::{self, FineGrainedArtifact};
use ethokit::pipeline::{read_jsonl, DescriptionRecord, FrameRecord, PipelineConfig, PipelineError, Session};
use serde::{Deserialize, Serialize};

pub const INVOCATION_LOG: &str = "invocations.jsonl";

/// One tool call, appended to `artifacts/invocations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub seq: u64,
    pub timestamp: String,
    pub tool: String,
    /// The full tool input; replay feeds it back unchanged.
    pub input: serde_json::Value,
    pub input_summary: String,
    pub output_summary: String,
    /// Session-relative paths written by the call.
    pub artifacts: Vec<String>,
    /// Revision the response was computed from.
    pub revision: u64,
}

/// Everything a read needs, loaded at one revision.
pub struct Snapshot {
    pub revision: u64,
    pub frames: Vec<FrameRecord>,
    pub descriptions: BTreeMap<u64, DescriptionRecord>,
    pub behaviors: BTreeMap<u64, String>,
    pub finegrained: Option<FineGrainedArtifact>,
    pub store: Option<Arc<VectorStore>>,
    pub poses: BTreeMap<u64, Pose3D>,
    pub novelty: BTreeMap<u64, f64>,
    pub rig: Option<CameraRig>,
}

impl Snapshot {
    fn load(session: &Session, revision: u64) -> Result<Self, PipelineError> {
        let frames = match stages::load_frames(session) {
            Ok((f, _)) => f,
            Err(PipelineError::Missing { .. }) => Vec::new(),
            Err(e) => return Err(e),
        };
        let descriptions = stages::load_descriptions(session).map(|d| d.0).unwrap_or_default();
        let behaviors = stages::load_behaviors(session).map(|b| b.0).unwrap_or_default();
        let fine_path = session.artifact(stages::FINEGRAINED_DETAIL);
        let finegrained = if fine_path.exists() {
            Some(serde_json::from_str(&std::fs::read_to_string(&fine_path)?)?)
        } else {
            None
        };
        let store = stages::load_store(session).ok().map(|s| Arc::new(s.0));
        let sampled: std::collections::BTreeSet<u64> = frames.iter().map(|f| f.frame_index).collect();
        let poses_path = session.artifact(stages::POSES);
        let poses = if poses_path.exists() {
            read_jsonl::<Pose3D>(&poses_path)?
                .into_iter()
                .filter(|p| sampled.contains(&p.frame_index))
                .map(|p| (p.frame_index, p))
                .collect()
        } else {
            BTreeMap::new()
        };
        let novelty_path = session.artifact(stages::NOVELTY);
        let novelty = if novelty_path.exists() {
            let rep: ethokit::anomaly::NoveltyReport = serde_json::from_str(&std::fs::read_to_string(&novelty_path)?)?;
            rep.scores.into_iter().collect()
        } else {
            BTreeMap::new()
        };
        let rig = CameraRig::load(&session.input(&session.config.calibration)).ok();
        Ok(Self { revision, frames, descriptions, behaviors, finegrained, store, poses, novelty, rig })
    }

    pub fn fine_labels(&self, frame_index: u64) -> Option<&BTreeMap<BodyPart, Vec<String>>> {
        self.finegrained.as_ref().and_then(|f| f.labels.frames.get(&frame_index))
    }
}

pub struct SessionHandle {
    pub session: Session,
    pub config: PipelineConfig,
    snapshot: RwLock<Arc<Snapshot>>,
    /// Serializes mutating calls: one in flight per session.
    pub write: tokio::sync::Mutex<()>,
    log: std::sync::Mutex<u64>,
}

impl SessionHandle {
    pub fn open(dir: &Path, config: PipelineConfig) -> Result<Self, PipelineError> {
        let session = Session::open(dir)?;
        std::fs::create_dir_all(session.artifacts())?;
        let snapshot = Snapshot::load(&session, 1)?;
        let seq = read_log(&session)?.last().map_or(0, |r| r.seq);
        Ok(Self {
            session,
            config,
            snapshot: RwLock::new(Arc::new(snapshot)),
            write: tokio::sync::Mutex::new(()),
            log: std::sync::Mutex::new(seq),
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Reloads artifacts from disk under the next revision and swaps them in.
    pub fn reload(&self) -> Result<Arc<Snapshot>, PipelineError> {
        let next = self.snapshot().revision + 1;
        let snap = Arc::new(Snapshot::load(&self.session, next)?);
        *self.snapshot.write().expect("snapshot lock") = snap.clone();
        Ok(snap)
    }

    pub fn append_log(&self, mut record: InvocationRecord) -> Result<InvocationRecord, PipelineError> {
        let mut seq = self.log.lock().expect("log lock");
        *seq += 1;
        record.seq = *seq;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.session.artifact(INVOCATION_LOG))?;
        writeln!(f, "{}", serde_json::to_string(&record)?)?;
        Ok(record)
    }

    pub fn read_log(&self) -> Result<Vec<InvocationRecord>, PipelineError> {
        read_log(&self.session)
    }

    pub fn cluster_report(&self) -> Option<ClusterReport> {
        let p = self.session.artifact(stages::CLUSTER_REPORT);
        serde_json::from_str(&std::fs::read_to_string(p).ok()?).ok()
    }
}

fn read_log(session: &Session) -> Result<Vec<InvocationRecord>, PipelineError> {
    let p = session.artifact(INVOCATION_LOG);
    if p.exists() {
        read_jsonl(&p)
    } else {
        Ok(Vec::new())
    }
}
