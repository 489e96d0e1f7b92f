mod common;

use std::collections::BTreeMap;
use std::path::Path;

use ethokit::pipeline::stages::{self, Stage};
use ethokit::pipeline::{run, run_all, PipelineConfig, PipelineError, Session, CHAIN};
use ethokit::synthetic::{generate_session, SynthConfig};

const EXPECTED: [&str; 25] = [
    "annotation_log.jsonl",
    "bboxes.jsonl",
    "cluster_model.json",
    "cluster_report.json",
    "clusters.csv",
    "descriptions.jsonl",
    "embeddings.ekvs",
    "embeddings.ekvs.meta.json",
    "ethogram.csv",
    "finegrained.csv",
    "finegrained.json",
    "frames.jsonl",
    "infocard.json",
    "lexicon.toml",
    "novelty.json",
    "occupancy.csv",
    "poses.jsonl",
    "prediction.json",
    "prediction_matrix.csv",
    "profile.json",
    "proportions.csv",
    "search.csv",
    "search_ranking.csv",
    "velocity.jsonl",
    "windows.csv",
];

fn short_session(dir: &Path) -> Session {
    let cfg = SynthConfig { duration_s: 120.0, ..Default::default() };
    generate_session(dir, &cfg).unwrap();
    Session::open(dir).unwrap()
}

fn config(jobs: usize) -> PipelineConfig {
    let mut c = PipelineConfig { jobs, ..Default::default() };
    c.cluster.theta_c = 4;
    c.cluster.theta_e = 10;
    c
}

#[test]
fn short_session_end_to_end_and_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let a = short_session(&tmp.path().join("a"));
    let manifests = run_all(&a, &config(0), "lying down").unwrap();
    assert_eq!(manifests.len(), CHAIN.len() + 2);
    for name in EXPECTED {
        assert!(a.artifact(name).exists(), "{name} missing");
    }
    for m in &manifests {
        assert!(a.manifest_path(&m.command).exists());
        for (rel, hash) in &m.outputs {
            assert_eq!(hash.len(), 64, "{rel}");
        }
    }

    let (frames, _) = stages::load_frames(&a).unwrap();
    assert_eq!(frames.len(), 600);
    let (behaviors, _) = stages::load_behaviors(&a).unwrap();
    assert_eq!(behaviors.len(), frames.len());
    let report = std::fs::read_to_string(a.artifact(stages::CLUSTERS)).unwrap();
    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    for line in report.lines().skip(1) {
        *sizes.entry(line.split(',').nth(2).unwrap().to_string()).or_default() += 1;
    }
    assert_eq!(sizes.values().sum::<usize>(), frames.len());
    assert!(sizes.values().all(|&s| s >= 10), "{sizes:?}");

    let b = short_session(&tmp.path().join("b"));
    run_all(&b, &config(1), "lying down").unwrap();
    assert_eq!(common::artifact_digests(&a.root), common::artifact_digests(&b.root));
}

#[test]
fn stage_errors_carry_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let s = short_session(tmp.path());
    let err = run(&s, &config(1), &Stage::Cluster).unwrap_err();
    assert!(matches!(err, PipelineError::Missing { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);

    let err = Session::open(&tmp.path().join("nowhere")).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    for stage in ["ingest", "triangulate", "velocity", "annotate", "embed"] {
        run(&s, &config(1), &Stage::parse_simple(stage).unwrap()).unwrap();
    }
    let mut bad = config(1);
    bad.provider = "nonexistent".into();
    let err = run(&s, &bad, &Stage::Annotate).unwrap_err();
    assert!(matches!(err, PipelineError::Validation(_)), "{err}");

    let mut huge = config(1);
    huge.cluster.theta_e = 10_000;
    let err = run(&s, &huge, &Stage::Cluster).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    let err = run(&s, &config(1), &Stage::Search { query: "  ".into(), n: 5 }).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    std::fs::write(s.root.join("session.toml"), "id = 3").unwrap();
    assert_eq!(Session::open(&s.root).unwrap_err().exit_code(), 2);
}
