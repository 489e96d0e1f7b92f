use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::io::{read_csv, read_json, read_jsonl, write_csv, write_json, write_jsonl, DescriptionMetadata};
use super::{DescriptionRecord, FrameRecord, PipelineConfig, PipelineError, Result, Session};
use crate::analytics::{
    behavior_proportions, build_profile, leave_one_out, predict_phenotype, prediction_matrix, search, spatial_occupancy,
    window_proportions, EthogramTrack, PhenotypeProfile, Prediction, Sample, ARENA_RADIUS_CM,
};
use crate::annotation::{annotate_frames, filter_dataset, sample_frames, AnnotationInput, BehaviorDescription};
use crate::anomaly::consensus_detect;
use crate::clustering::{cluster, report, ClusterParams, MergerRegistry};
use crate::embedding::{embed_description, StoreEntryMeta, VectorStore};
use crate::finegrained::lexicon::Lexicon;
use crate::finegrained::{build_infocard, classify_frames, AssignerRegistry, FallbackError, FineGrainedLabels, NewKey};
use crate::kinematics::{
    bbox_from_keypoints, group_by_frame, observations_by_keypoint, triangulate_pose, velocity, BoundingBox, CameraRig,
    KinematicsError, Pose3D, SpeedSummary, VelocityRecord, ViewKeypoints, DEFAULT_BOX_PADDING,
};
use crate::provider::{Provider, RecordingProvider};

pub const FRAMES: &str = "frames.jsonl";
pub const BBOXES: &str = "bboxes.jsonl";
pub const POSES: &str = "poses.jsonl";
pub const VELOCITY: &str = "velocity.jsonl";
pub const DESCRIPTIONS: &str = "descriptions.jsonl";
pub const ANNOTATION_LOG: &str = "annotation_log.jsonl";
pub const EMBEDDINGS: &str = "embeddings.ekvs";
pub const EMBEDDINGS_META: &str = "embeddings.ekvs.meta.json";
pub const CLUSTERS: &str = "clusters.csv";
pub const CLUSTER_REPORT: &str = "cluster_report.json";
pub const CLUSTER_MODEL: &str = "cluster_model.json";
pub const FINEGRAINED: &str = "finegrained.csv";
pub const FINEGRAINED_DETAIL: &str = "finegrained.json";
pub const LEXICON: &str = "lexicon.toml";
pub const INFOCARD: &str = "infocard.json";
pub const NOVELTY: &str = "novelty.json";
pub const SEARCH: &str = "search.csv";
pub const SEARCH_RANKING: &str = "search_ranking.csv";
pub const ETHOGRAM: &str = "ethogram.csv";
pub const WINDOWS: &str = "windows.csv";
pub const PROPORTIONS: &str = "proportions.csv";
pub const OCCUPANCY: &str = "occupancy.csv";
pub const PROFILE: &str = "profile.json";
pub const PREDICTION: &str = "prediction.json";
pub const PREDICTION_MATRIX: &str = "prediction_matrix.csv";

/// Ethogram label of a sampled frame without a cluster assignment.
pub const UNANNOTATED: &str = "unannotated";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Triangulate,
    Velocity,
    Annotate,
    Embed,
    Cluster,
    FineGrained,
    Anomaly,
    Search { query: String, n: usize },
    Ethogram,
    Profile,
    Predict,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Triangulate => "triangulate",
            Stage::Velocity => "velocity",
            Stage::Annotate => "annotate",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::FineGrained => "finegrained",
            Stage::Anomaly => "anomaly",
            Stage::Search { .. } => "search",
            Stage::Ethogram => "ethogram",
            Stage::Profile => "profile",
            Stage::Predict => "predict",
        }
    }

    /// Stages that take no arguments, by name.
    pub fn parse_simple(name: &str) -> Option<Stage> {
        Some(match name {
            "ingest" => Stage::Ingest,
            "triangulate" => Stage::Triangulate,
            "velocity" => Stage::Velocity,
            "annotate" => Stage::Annotate,
            "embed" => Stage::Embed,
            "cluster" => Stage::Cluster,
            "finegrained" => Stage::FineGrained,
            "anomaly" => Stage::Anomaly,
            "ethogram" => Stage::Ethogram,
            "profile" => Stage::Profile,
            "predict" => Stage::Predict,
            _ => return None,
        })
    }

    pub fn args(&self) -> serde_json::Value {
        match self {
            Stage::Search { query, n } => json!({ "query": query, "n": n }),
            _ => json!({}),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StageOutput {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub providers: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub summary: serde_json::Value,
}

pub fn execute(session: &Session, config: &PipelineConfig, stage: &Stage) -> Result<StageOutput> {
    std::fs::create_dir_all(session.artifacts())?;
    match stage {
        Stage::Ingest => ingest(session),
        Stage::Triangulate => triangulate(session, config),
        Stage::Velocity => velocity_stage(session, config),
        Stage::Annotate => annotate(session, config),
        Stage::Embed => embed(session, config),
        Stage::Cluster => cluster_stage(session, config),
        Stage::FineGrained => finegrained(session, config),
        Stage::Anomaly => anomaly(session, config),
        Stage::Search { query, n } => search_stage(session, config, query, *n),
        Stage::Ethogram => ethogram(session, config),
        Stage::Profile => profile(session),
        Stage::Predict => predict(session, config),
    }
}

/// The configured provider, with relative image references resolved
/// against the session directory.
pub fn session_provider(session: &Session, config: &PipelineConfig) -> Result<Arc<dyn Provider>> {
    let mut c = config.clone();
    if c.provider_settings.image_root.is_none() {
        c.provider_settings.image_root = Some(session.root.clone());
    }
    c.provider()
}

fn load_rig(session: &Session) -> Result<(CameraRig, PathBuf)> {
    let path = session.require_input(&session.config.calibration)?;
    Ok((CameraRig::load(&path)?, path))
}

fn load_keypoints(session: &Session, rig: &CameraRig) -> Result<(Vec<ViewKeypoints>, PathBuf)> {
    let path = session.require_input(&session.config.keypoints)?;
    let records: Vec<ViewKeypoints> = read_jsonl(&path)?;
    for r in &records {
        r.validate()?;
        if rig.get(&r.camera_id).is_none() {
            return Err(KinematicsError::UnknownCamera(r.camera_id.clone()).into());
        }
    }
    Ok((records, path))
}

pub fn load_frames(session: &Session) -> Result<(Vec<FrameRecord>, PathBuf)> {
    let path = session.require(FRAMES, "ingest")?;
    Ok((read_jsonl(&path)?, path))
}

pub fn load_descriptions(session: &Session) -> Result<(BTreeMap<u64, DescriptionRecord>, PathBuf)> {
    let path = session.require(DESCRIPTIONS, "annotate")?;
    let rows: Vec<DescriptionRecord> = read_jsonl(&path)?;
    Ok((rows.into_iter().map(|r| (r.metadata.frame_index, r)).collect(), path))
}

pub fn load_store(session: &Session) -> Result<(VectorStore, Vec<PathBuf>)> {
    let path = session.require(EMBEDDINGS, "embed")?;
    Ok((VectorStore::load(&path)?, vec![path, session.artifact(EMBEDDINGS_META)]))
}

/// `frame_index → behavior` from `clusters.csv`.
pub fn load_behaviors(session: &Session) -> Result<(BTreeMap<u64, String>, PathBuf)> {
    let path = session.require(CLUSTERS, "cluster")?;
    let mut out = BTreeMap::new();
    for r in read_csv(&path)? {
        let f: u64 = r[0].parse().map_err(|_| PipelineError::Validation(format!("bad frame index {:?}", &r[0])))?;
        out.insert(f, r[3].to_string());
    }
    Ok((out, path))
}

pub fn image_ref(camera: &str, frame_index: u64) -> String {
    format!("frames/{camera}/{frame_index:06}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewBox {
    pub frame_index: u64,
    pub camera_id: String,
    pub bbox: BoundingBox,
}

fn ingest(session: &Session) -> Result<StageOutput> {
    let cfg = &session.config;
    let (rig, cal_path) = load_rig(session)?;
    for v in &cfg.description_views {
        if rig.get(v).is_none() {
            return Err(PipelineError::Validation(format!("description view {v:?} is not in the calibration")));
        }
    }
    let (records, kp_path) = load_keypoints(session, &rig)?;
    let sampled = sample_frames(cfg.fps, cfg.duration_s, cfg.target_rate)?;
    let by_frame = group_by_frame(records);
    let mut frames = Vec::with_capacity(sampled.len());
    let mut boxes = Vec::new();
    let mut missing = Vec::new();
    for &f in &sampled {
        match by_frame.get(&f) {
            Some(views) => {
                for v in views {
                    let size = rig.get(&v.camera_id).and_then(|c| c.image_size);
                    if let Ok(bbox) = bbox_from_keypoints(&v.keypoints, DEFAULT_BOX_PADDING, size) {
                        boxes.push(ViewBox { frame_index: f, camera_id: v.camera_id.clone(), bbox });
                    }
                }
            }
            None => missing.push(f),
        }
        frames.push(FrameRecord {
            session_id: cfg.id.clone(),
            frame_index: f,
            time_s: session.time_of(f),
            view_image_refs: rig.cameras.iter().map(|c| image_ref(&c.id, f)).collect(),
            keypoints_2d: cfg.keypoints.clone(),
            pose_3d: format!("{}/{POSES}", super::ARTIFACTS_DIR),
            velocity: format!("{}/{VELOCITY}", super::ARTIFACTS_DIR),
            description: None,
            embedding_id: None,
        });
    }
    write_jsonl(&session.artifact(FRAMES), &frames)?;
    write_jsonl(&session.artifact(BBOXES), &boxes)?;
    Ok(StageOutput {
        inputs: vec![session.input("session.toml"), cal_path, kp_path],
        outputs: vec![session.artifact(FRAMES), session.artifact(BBOXES)],
        summary: json!({
            "sampled_frames": frames.len(),
            "stride": session.stride(),
            "keypoint_frames": by_frame.len(),
            "sampled_without_keypoints": missing.len(),
            "cameras": rig.len(),
        }),
        ..Default::default()
    })
}

fn triangulate(session: &Session, config: &PipelineConfig) -> Result<StageOutput> {
    let (_, frames_path) = load_frames(session)?;
    let (rig, cal_path) = load_rig(session)?;
    let (records, kp_path) = load_keypoints(session, &rig)?;
    let by_frame: Vec<(u64, Vec<ViewKeypoints>)> = group_by_frame(records).into_iter().collect();
    let opts = config.triangulation;
    let poses: Vec<Pose3D> = by_frame
        .par_iter()
        .map(|(f, views)| triangulate_pose(*f, &observations_by_keypoint(views), &rig, &opts))
        .collect();
    let valid: usize = poses.iter().map(Pose3D::valid_count).sum();
    let mean_rms = poses.iter().map(|p| p.residual_rms).sum::<f64>() / poses.len().max(1) as f64;
    write_jsonl(&session.artifact(POSES), &poses)?;
    Ok(StageOutput {
        inputs: vec![frames_path, cal_path, kp_path],
        outputs: vec![session.artifact(POSES)],
        summary: json!({ "poses": poses.len(), "valid_points": valid, "mean_residual_rms_px": mean_rms }),
        ..Default::default()
    })
}

fn velocity_stage(session: &Session, config: &PipelineConfig) -> Result<StageOutput> {
    let (frames, frames_path) = load_frames(session)?;
    let poses_path = session.require(POSES, "triangulate")?;
    let poses: BTreeMap<u64, Pose3D> =
        read_jsonl::<Pose3D>(&poses_path)?.into_iter().map(|p| (p.frame_index, p)).collect();
    let mut records = Vec::with_capacity(frames.len());
    let mut without = 0;
    for fr in &frames {
        let f = fr.frame_index;
        let rec = match (poses.get(&f), f.checked_sub(1).and_then(|p| poses.get(&p))) {
            (Some(now), Some(prev)) => velocity(now, prev, session.config.fps, config.velocity_mode)?,
            _ => {
                without += 1;
                VelocityRecord::missing(f)
            }
        };
        records.push(rec);
    }
    write_jsonl(&session.artifact(VELOCITY), &records)?;
    Ok(StageOutput {
        inputs: vec![frames_path, poses_path],
        outputs: vec![session.artifact(VELOCITY)],
        summary: json!({ "records": records.len(), "without_previous_pose": without, "mode": config.velocity_mode }),
        ..Default::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationLogEntry {
    pub frame_index: u64,
    pub stage: String,
    pub class: Option<String>,
    pub message: String,
}

fn annotate(session: &Session, config: &PipelineConfig) -> Result<StageOutput> {
    let (frames, frames_path) = load_frames(session)?;
    let vel_path = session.require(VELOCITY, "velocity")?;
    let velocities: BTreeMap<u64, VelocityRecord> =
        read_jsonl::<VelocityRecord>(&vel_path)?.into_iter().map(|v| (v.frame_index, v)).collect();
    let views = &session.config.description_views;
    let inputs: Vec<AnnotationInput> = frames
        .iter()
        .map(|fr| AnnotationInput {
            frame_index: fr.frame_index,
            images: views.iter().map(|v| image_ref(v, fr.frame_index)).collect(),
            speeds: velocities.get(&fr.frame_index).map(SpeedSummary::from_record).unwrap_or_default(),
        })
        .collect();
    let base = session_provider(session, config)?;
    let provider_name = base.name();
    let recorder = (config.provider != "offline").then(|| Arc::new(RecordingProvider::new(base.clone())));
    let provider: &dyn Provider = match &recorder {
        Some(r) => r.as_ref(),
        None => base.as_ref(),
    };
    let results = annotate_frames(&inputs, provider, config.annotate_concurrency);
    let mut log = Vec::new();
    let mut ok = Vec::new();
    for r in results {
        match r.outcome {
            Ok(d) => ok.push((r.frame_index, d)),
            Err(e) => log.push(AnnotationLogEntry {
                frame_index: r.frame_index,
                stage: e.stage,
                class: e.class,
                message: e.message,
            }),
        }
    }
    let (kept, rejected) = filter_dataset(ok, config.min_score, |(f, d): &(u64, BehaviorDescription)| (*f, d.quality_score));
    for r in rejected {
        log.push(AnnotationLogEntry { frame_index: r.frame_index, stage: "filter".into(), class: None, message: r.reason });
    }
    log.sort_by_key(|e| e.frame_index);
    let rows: Vec<DescriptionRecord> = kept
        .iter()
        .map(|(f, d)| {
            DescriptionRecord::new(
                d,
                DescriptionMetadata {
                    frame_index: *f,
                    time_s: session.time_of(*f),
                    quality_score: d.quality_score,
                    provider: provider_name.clone(),
                },
            )
        })
        .collect();
    write_jsonl(&session.artifact(DESCRIPTIONS), &rows)?;
    write_jsonl(&session.artifact(ANNOTATION_LOG), &log)?;
    let mut outputs = vec![session.artifact(DESCRIPTIONS), session.artifact(ANNOTATION_LOG)];
    if let Some(r) = recorder {
        let dir = session.artifact("transcripts");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("annotate.json");
        r.transcript().save(&path)?;
        outputs.push(path);
    }
    Ok(StageOutput {
        inputs: vec![frames_path, vel_path],
        outputs,
        providers: BTreeMap::from([
            ("describe".to_string(), provider_name.clone()),
            ("rate".to_string(), provider_name),
        ]),
        summary: json!({
            "frames": inputs.len(),
            "kept": rows.len(),
            "failed_or_rejected": log.len(),
            "min_score": config.min_score,
        }),
        ..Default::default()
    })
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn embed(session: &Session, config: &PipelineConfig) -> Result<StageOutput> {
    let (descs, desc_path) = load_descriptions(session)?;
    let provider = session_provider(session, config)?;
    let items: Vec<(u64, BehaviorDescription)> = descs.iter().map(|(f, r)| (*f, r.description())).collect();
    let vectors = items
        .par_iter()
        .map(|(f, d)| embed_description(d, provider.as_ref()).map(|v| (*f, v, sha256_hex(&d.embedding_text()))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let dim = vectors.first().map_or(config.provider_settings.embedding_dim, |v| v.1.len());
    let mut store = VectorStore::new(dim);
    store.meta.provider = provider.name();
    for (f, v, sha) in &vectors {
        store.upsert(*f, v)?;
        store.meta.entries.insert(*f, StoreEntryMeta { frame_index: *f, text_sha256: sha.clone() });
    }
    store.save(&session.artifact(EMBEDDINGS))?;
    Ok(StageOutput {
        inputs: vec![desc_path],
        outputs: vec![session.artifact(EMBEDDINGS), session.artifact(EMBEDDINGS_META)],
        providers: BTreeMap::from([("embed".to_string(), provider.name())]),
        summary: json!({ "vectors": store.len(), "dim": dim }),
        ..Default::default()
    })
}

/// Store ids that have a kept description, with their vectors.
pub fn aligned(store: &VectorStore, descs: &BTreeMap<u64, DescriptionRecord>) -> (Vec<u64>, Vec<Vec<f64>>) {
    let ids: Vec<u64> = store.ids().into_iter().filter(|f| descs.contains_key(f)).collect();
    let vectors = ids.iter().map(|f| store.get(*f).expect("id from store").to_f64()).collect();
    (ids, vectors)
}

fn cluster_stage(session: &Session, config: &PipelineConfig) -> Result<StageOutput> {
    let (store, mut inputs) = load_store(session)?;
    let (descs, desc_path) = load_descriptions(session)?;
    inputs.push(desc_path);
    let (ids, vectors) = aligned(&store, &descs);
    let keywords: Vec<Vec<String>> = ids.iter().map(|f| descs[f].description().keywords).collect();
    let provider = session_provider(session, config)?;
    let merger = MergerRegistry::with_builtins().create(&config.cluster.merger, Some(provider.clone()))?;
    let params = ClusterParams {
        theta_c: config.cluster.theta_c,
        theta_e: config.cluster.theta_e,
        pre_projection: config.cluster.pre_projection,
    };
    let model = cluster(&ids, &vectors, &keywords, params, merger.as_ref())?;
    let rep = report(&model, &vectors)?;
    let names = model.behavior_names();
    let rows = ids.iter().zip(&model.assignments).map(|(f, c)| {
        vec![f.to_string(), session.time_of(*f).to_string(), c.to_string(), names[c].clone()]
    });
    write_csv(&session.artifact(CLUSTERS), &["frame_index", "time_s", "cluster", "behavior"], rows)?;
    write_json(&session.artifact(CLUSTER_REPORT), &rep)?;
    write_json(&session.artifact(CLUSTER_MODEL), &model)?;
    let sizes = model.sizes();
    Ok(StageOutput {
        inputs,
        outputs: vec![session.artifact(CLUSTERS), session.artifact(CLUSTER_REPORT), session.artifact(CLUSTER_MODEL)],
        providers: BTreeMap::from([("merge".to_string(), model.merger.clone())]),
        summary: json!({
            "frames": ids.len(),
            "clusters": sizes.len(),
            "sizes": sizes.iter().map(|(c, s)| (names[c].clone(), *s)).collect::<BTreeMap<_, _>>(),
            "merges": model.merge_history.len(),
            "merge_rejected": model.merge_rejected,
        }),
        ..Default::default()
    })
}

/// Contents of `finegrained.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineGrainedArtifact {
    pub assigner: String,
    pub labels: FineGrainedLabels,
    pub errors: Vec<FallbackError>,
    pub new_keys: Vec<NewKey>,
}

fn finegrained(session: &Session, config: &PipelineConfig) -> Result<StageOutput> {
    let (descs, desc_path) = load_descriptions(session)?;
    let mut inputs = vec![desc_path];
    let lexicon = match &config.finegrained.lexicon {
        Some(p) => {
            inputs.push(p.clone());
            Lexicon::load(p)?
        }
        None => Lexicon::seed(),
    };
    let provider = session_provider(session, config)?;
    let assigner = AssignerRegistry::with_builtins().create(&config.finegrained.assigner, Some(provider))?;
    let items: Vec<(u64, BehaviorDescription)> = descs.iter().map(|(f, r)| (*f, r.description())).collect();
    let refs: Vec<(u64, &BehaviorDescription)> = items.iter().map(|(f, d)| (*f, d)).collect();
    let out = classify_frames(&refs, lexicon, assigner.as_ref());

    let rows = out.labels.rows().into_iter().map(|(f, p, k)| vec![f.to_string(), p.as_str().to_string(), k]);
    write_csv(&session.artifact(FINEGRAINED), &["frame_index", "part", "key"], rows)?;
    out.lexicon.save(&session.artifact(LEXICON))?;
    let detail = FineGrainedArtifact {
        assigner: assigner.name(),
        labels: out.labels.clone(),
        errors: out.errors.clone(),
        new_keys: out.new_keys.clone(),
    };
    write_json(&session.artifact(FINEGRAINED_DETAIL), &detail)?;

    let mut cards = Vec::new();
    if !out.labels.frames.is_empty() {
        cards.push(build_infocard(&out.labels, "session", None)?);
    }
    if let Ok((behaviors, path)) = load_behaviors(session) {
        inputs.push(path);
        let mut by_behavior: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
        for (f, b) in &behaviors {
            by_behavior.entry(b.as_str()).or_default().insert(*f);
        }
        for (b, frames) in by_behavior {
            if frames.iter().any(|f| out.labels.frames.contains_key(f)) {
                cards.push(build_infocard(&out.labels, &format!("behavior:{b}"), Some(&frames))?);
            }
        }
    }
    write_json(&session.artifact(INFOCARD), &cards)?;
    Ok(StageOutput {
        inputs,
        outputs: vec![
            session.artifact(FINEGRAINED),
            session.artifact(LEXICON),
            session.artifact(FINEGRAINED_DETAIL),
            session.artifact(INFOCARD),
        ],
        providers: BTreeMap::from([("assign".to_string(), assigner.name())]),
        summary: json!({
            "frames": out.labels.frames.len(),
            "lexicon_revision": out.lexicon.revision(),
            "new_keys": out.new_keys.len(),
            "errors": out.errors.len(),
        }),
        ..Default::default()
    })
}

fn anomaly(session: &Session, config: &PipelineConfig) -> Result<StageOutput> {
    let (store, mut inputs) = load_store(session)?;
    let (descs, desc_path) = load_descriptions(session)?;
    inputs.push(desc_path);
    let (ids, vectors) = aligned(&store, &descs);
    let overall: BTreeMap<u64, String> = ids.iter().map(|f| (*f, descs[f].overall.clone())).collect();
    let params = config.anomaly_params();
    let rep = consensus_detect(&ids, &vectors, &overall, params)?;
    write_json(&session.artifact(NOVELTY), &rep)?;
    Ok(StageOutput {
        inputs,
        outputs: vec![session.artifact(NOVELTY)],
        seeds: BTreeMap::from([("anomaly".to_string(), params.forest.seed)]),
        summary: json!({
            "frames": ids.len(),
            "flags_per_run": rep.flagged_per_run.iter().map(Vec::len).collect::<Vec<_>>(),
            "flagged": rep.flagged.iter().map(|f| f.frame_id).collect::<Vec<_>>(),
        }),
        ..Default::default()
    })
}

fn search_stage(session: &Session, config: &PipelineConfig, query: &str, n: usize) -> Result<StageOutput> {
    if n == 0 {
        return Err(PipelineError::Validation("n must be at least 1".into()));
    }
    let (store, mut inputs) = load_store(session)?;
    let (descs, desc_path) = load_descriptions(session)?;
    inputs.push(desc_path);
    let provider = session_provider(session, config)?;
    let hits = search(query, &store, provider.as_ref())?;
    let top = hits.iter().take(n).enumerate().map(|(i, h)| {
        vec![
            (i + 1).to_string(),
            h.frame_id.to_string(),
            session.time_of(h.frame_id).to_string(),
            h.similarity.to_string(),
            descs.get(&h.frame_id).map(|d| d.overall.clone()).unwrap_or_default(),
        ]
    });
    write_csv(&session.artifact(SEARCH), &["rank", "frame_index", "time_s", "similarity", "overall"], top)?;
    let all = hits
        .iter()
        .enumerate()
        .map(|(i, h)| vec![(i + 1).to_string(), h.frame_id.to_string(), h.similarity.to_string()]);
    write_csv(&session.artifact(SEARCH_RANKING), &["rank", "frame_index", "similarity"], all)?;
    Ok(StageOutput {
        inputs,
        outputs: vec![session.artifact(SEARCH), session.artifact(SEARCH_RANKING)],
        providers: BTreeMap::from([("embed".to_string(), provider.name())]),
        summary: json!({ "query": query, "n": n, "ranked": hits.len() }),
        ..Default::default()
    })
}

/// The session's ethogram over every sampled frame.
pub fn load_track(session: &Session) -> Result<(EthogramTrack, Vec<PathBuf>)> {
    let (frames, frames_path) = load_frames(session)?;
    let (behaviors, clusters_path) = load_behaviors(session)?;
    let samples = frames
        .iter()
        .map(|f| Sample {
            time_s: f.time_s,
            frame_id: f.frame_index,
            label: behaviors.get(&f.frame_index).cloned().unwrap_or_else(|| UNANNOTATED.to_string()),
        })
        .collect();
    let stride_s = session.stride() as f64 / session.config.fps;
    Ok((EthogramTrack::new(&session.config.subject, stride_s, samples)?, vec![frames_path, clusters_path]))
}

fn ethogram(session: &Session, config: &PipelineConfig) -> Result<StageOutput> {
    let (track, mut inputs) = load_track(session)?;
    let poses_path = session.require(POSES, "triangulate")?;
    inputs.push(poses_path.clone());
    let rows = track
        .samples
        .iter()
        .map(|s| vec![s.time_s.to_string(), s.frame_id.to_string(), s.label.clone()]);
    write_csv(&session.artifact(ETHOGRAM), &["time_s", "frame_index", "behavior"], rows)?;

    let windows = window_proportions(&track, config.window_s)?;
    let mut wrows = Vec::new();
    for w in &windows {
        for (label, p) in &w.proportions {
            wrows.push(vec![
                w.index.to_string(),
                w.start_s.to_string(),
                w.end_s.to_string(),
                w.samples.to_string(),
                w.partial.to_string(),
                label.clone(),
                p.to_string(),
            ]);
        }
    }
    write_csv(
        &session.artifact(WINDOWS),
        &["window", "start_s", "end_s", "samples", "partial", "behavior", "proportion"],
        wrows,
    )?;

    let group = session.config.group.clone().unwrap_or_else(|| "ungrouped".into());
    let props = behavior_proportions(&BTreeMap::from([(group, vec![track.clone()])]))?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let prows = props.iter().map(|r| {
        vec![
            r.group.clone(),
            r.label.clone(),
            r.subjects.to_string(),
            r.mean.to_string(),
            opt(r.sd),
            opt(r.ci_low),
            opt(r.ci_high),
        ]
    });
    write_csv(
        &session.artifact(PROPORTIONS),
        &["group", "behavior", "subjects", "mean", "sd", "ci_low", "ci_high"],
        prows,
    )?;

    let sampled: BTreeSet<u64> = track.samples.iter().map(|s| s.frame_id).collect();
    let poses: Vec<Pose3D> =
        read_jsonl::<Pose3D>(&poses_path)?.into_iter().filter(|p| sampled.contains(&p.frame_index)).collect();
    let labels: BTreeMap<u64, String> = track.samples.iter().map(|s| (s.frame_id, s.label.clone())).collect();
    let occ = spatial_occupancy(&poses, &labels, ARENA_RADIUS_CM)?;
    let orows = occ.points.iter().map(|p| {
        vec![
            p.frame_id.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.label.clone().unwrap_or_default(),
            p.outside.to_string(),
        ]
    });
    write_csv(&session.artifact(OCCUPANCY), &["frame_index", "x_cm", "y_cm", "behavior", "outside"], orows)?;
    Ok(StageOutput {
        inputs,
        outputs: vec![
            session.artifact(ETHOGRAM),
            session.artifact(WINDOWS),
            session.artifact(PROPORTIONS),
            session.artifact(OCCUPANCY),
        ],
        summary: json!({
            "samples": track.samples.len(),
            "windows": windows.len(),
            "partial_windows": windows.iter().filter(|w| w.partial).count(),
            "proportions": track.proportions(),
            "occupancy_points": occ.points.len(),
            "outside_arena": occ.points.iter().filter(|p| p.outside).count(),
        }),
        ..Default::default()
    })
}

fn profile(session: &Session) -> Result<StageOutput> {
    let (track, mut inputs) = load_track(session)?;
    let fine = match session.require(FINEGRAINED_DETAIL, "finegrained") {
        Ok(p) => {
            inputs.push(p.clone());
            Some(read_json::<FineGrainedArtifact>(&p)?)
        }
        Err(_) => None,
    };
    let majors: Vec<String> = track
        .samples
        .iter()
        .map(|s| s.label.clone())
        .filter(|l| l != UNANNOTATED)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let p = build_profile(
        &session.config.subject,
        session.config.group.as_deref(),
        &track,
        fine.as_ref().map(|f| (&f.labels, majors.as_slice())),
    )?;
    write_json(&session.artifact(PROFILE), &p)?;
    Ok(StageOutput {
        inputs,
        outputs: vec![session.artifact(PROFILE)],
        summary: json!({ "features": p.features.len() }),
        ..Default::default()
    })
}

/// Contents of `prediction.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionArtifact {
    pub session: Prediction,
    /// Each reference predicted from the others.
    pub leave_one_out: Vec<Prediction>,
    pub leave_one_out_accuracy: f64,
}

fn predict(session: &Session, config: &PipelineConfig) -> Result<StageOutput> {
    let profile_path = session.require(PROFILE, "profile")?;
    let refs_name = session.config.references.as_ref().ok_or_else(|| PipelineError::Missing {
        path: "references".into(),
        hint: "session.toml names no reference cohort".into(),
    })?;
    let refs_path = session.require_input(refs_name)?;
    let profile: PhenotypeProfile = read_json(&profile_path)?;
    let refs: Vec<PhenotypeProfile> = read_json(&refs_path)?;
    let pred = predict_phenotype(&profile, &refs, &config.predict)?;
    let loo = leave_one_out(&refs, &config.predict)?;
    let pairs: Vec<(String, String)> =
        loo.iter().filter_map(|p| p.actual.clone().map(|a| (a, p.predicted.clone()))).collect();
    let correct = pairs.iter().filter(|(a, p)| a == p).count();
    let accuracy = correct as f64 / pairs.len().max(1) as f64;
    let matrix = prediction_matrix(&pairs);
    std::fs::write(session.artifact(PREDICTION_MATRIX), matrix.to_csv())?;
    let artifact = PredictionArtifact { session: pred.clone(), leave_one_out: loo, leave_one_out_accuracy: accuracy };
    write_json(&session.artifact(PREDICTION), &artifact)?;
    Ok(StageOutput {
        inputs: vec![profile_path, refs_path],
        outputs: vec![session.artifact(PREDICTION), session.artifact(PREDICTION_MATRIX)],
        summary: json!({
            "predicted": pred.predicted,
            "actual": pred.actual,
            "leave_one_out_accuracy": accuracy,
        }),
        ..Default::default()
    })
}
