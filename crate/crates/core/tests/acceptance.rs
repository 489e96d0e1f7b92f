//! One line per acceptance criterion. Exits non-zero when any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ethokit::analytics::{leave_one_out, predict_phenotype, prediction_matrix, search, PhenotypeProfile, PredictOptions};
use ethokit::annotation::{extract_json, BehaviorDescription, DescriptionFields};
use ethokit::anomaly::{fit, flag_outliers, ForestParams, NoveltyReport};
use ethokit::clustering::{cluster, ClusterParams, OfflineMerger};
use ethokit::finegrained::{classify_frames, DisabledAssigner, Lexicon, OfflineAssigner};
use ethokit::kinematics::{signed_speed, triangulate_pose, velocity, Pose3D, TriangulationOptions, VelocityMode, NUM_KEYPOINTS};
use ethokit::pipeline::stages;
use ethokit::pipeline::{read_jsonl, run_all, PipelineConfig, Session, CHAIN};
use ethokit::provider::OfflineProvider;
use ethokit::synthetic::{generate_session, ring_rig, SynthConfig};
use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn triangulation() -> Outcome {
    let rig = ring_rig();
    let opts = TriangulationOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rms = |noise: f64| {
        let (mut sq, mut count) = (0.0, 0usize);
        let mut inputs = Vec::with_capacity(1000);
        for _ in 0..1000 {
            let truth = common::skeleton(&mut rng);
            let obs = common::observe(&rig, &truth, noise, &mut rng);
            inputs.push((truth, obs));
        }
        let clock = Instant::now();
        for (f, (truth, obs)) in inputs.iter().enumerate() {
            let pose = triangulate_pose(f as u64, obs, &rig, &opts);
            for (j, t) in truth.iter().enumerate() {
                let d = pose.point(j).map_or(f64::INFINITY, |p| (p - t).norm());
                sq += d * d;
                count += 1;
            }
        }
        ((sq / count as f64).sqrt(), clock.elapsed().as_secs_f64())
    };
    let (clean, t_clean) = rms(0.0);
    let (noisy, t_noisy) = rms(0.5);
    check(
        clean < 1e-6 && noisy < 0.1 && t_clean < 5.0 && t_noisy < 5.0,
        format!("noiseless rms {clean:.2e} cm, 0.5 px rms {noisy:.4} cm, {t_noisy:.2} s per 1000 frames"),
    )
}

fn kinematics() -> Outcome {
    let g = Vector3::new(2.0, 1.0, 0.0);
    let h = Vector3::new(1.0, 1.0, 0.0);
    let table = signed_speed(&Vector3::new(3.0, 0.0, 0.0), &g, &h) == Ok(-3.0)
        && signed_speed(&Vector3::new(-3.0, 0.0, 0.0), &g, &h) == Ok(3.0)
        && signed_speed(&Vector3::new(0.0, 3.0, 4.0), &g, &h) == Ok(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut signs_ok = true;
    let rand_body = |rng: &mut ChaCha8Rng| -> Vec<Vector3<f64>> {
        (0..NUM_KEYPOINTS).map(|_| Vector3::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), rng.gen_range(0.0..10.0))).collect()
    };
    let pose = |f, pts: &[Vector3<f64>]| {
        let mut p = Pose3D::empty(f);
        for (s, v) in p.points.iter_mut().zip(pts) {
            *s = Some([v.x, v.y, v.z]);
        }
        p
    };
    for _ in 0..1000 {
        let a = rand_body(&mut rng);
        let b = rand_body(&mut rng);
        let fps = rng.gen_range(1.0..240.0);
        let k = rng.gen_range(-4.0..4.0);
        let base = velocity(&pose(1, &b), &pose(0, &a), fps, VelocityMode::PerSecond).unwrap();
        // Linearity: scaling the displacement scales the velocity.
        let scaled: Vec<_> = a.iter().zip(&b).map(|(p, q)| p + (q - p) * k).collect();
        let vk = velocity(&pose(1, &scaled), &pose(0, &a), fps, VelocityMode::PerSecond).unwrap();
        // Rigid motion applied to both frames rotates velocities and keeps signed speeds.
        let axis = Unit::new_normalize(Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0)));
        let r = Rotation3::from_axis_angle(&axis, rng.gen_range(-3.0..3.0));
        let t = Vector3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
        let mv = |pts: &[Vector3<f64>]| -> Vec<Vector3<f64>> { pts.iter().map(|p| r * p + t).collect() };
        let moved = velocity(&pose(1, &mv(&b)), &pose(0, &mv(&a)), fps, VelocityMode::PerSecond).unwrap();
        for j in 0..NUM_KEYPOINTS {
            let v = base.vector(j).unwrap();
            let scale = 1.0 + v.norm();
            worst = worst.max((vk.vector(j).unwrap() - v * k).norm() / scale);
            worst = worst.max((moved.vector(j).unwrap() - r * v).norm() / scale);
            let (s0, s1) = (base.signed_speed[j].unwrap(), moved.signed_speed[j].unwrap());
            worst = worst.max((s0 - s1).abs() / scale);
            signs_ok &= s0.signum() == s1.signum() || s0 == 0.0;
        }
    }
    check(table && signs_ok && worst <= 1e-6, format!("sign table exact, worst relative deviation {worst:.1e} over 1000 trials"))
}

fn blobs() -> Outcome {
    let (vectors, truth) = common::three_blobs(50, 16, 9);
    let ids: Vec<u64> = (0..150).collect();
    let words = [["rear", "lift", "stand"], ["walk", "step", "move"], ["rest", "lie", "still"]];
    let keywords: Vec<Vec<String>> = truth.iter().map(|&b| words[b].iter().map(|w| w.to_string()).collect()).collect();
    let model = cluster(&ids, &vectors, &keywords, ClusterParams::new(3, 10), &OfflineMerger::default()).map_err(|e| e.to_string())?;
    let ari = common::adjusted_rand_index(&model.assignments, &truth);
    check(ari == 1.0, format!("ARI {ari} on n=150"))
}

fn forest() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in [2usize, 7, 16, 33, 64] {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100 * n as u64);
            let v: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let params = ForestParams { n_estimators: 50, subsample: 32, seed };
            let model = fit(&v, params).unwrap();
            let oracle = common::oracle_mean_paths(&v, 50, 32, seed, &v);
            for (x, o) in v.iter().zip(oracle) {
                worst = worst.max((model.mean_path_length(x).unwrap() - o).abs());
            }
        }
    }
    let (mut hits, mut counts_ok) = (0, true);
    for seed in 0..20 {
        let v = common::planted_cloud(seed);
        let ids: Vec<u64> = (0..v.len() as u64).collect();
        let model = fit(&v, ForestParams { seed, ..Default::default() }).unwrap();
        let flags = flag_outliers(&ids, &model.score_all(&v).unwrap(), 1e-4).unwrap();
        counts_ok &= flags.len() == v.len().div_ceil(10_000);
        hits += flags.contains(&0) as usize;
    }
    check(
        worst <= 1e-12 && hits >= 18 && counts_ok,
        format!("oracle deviation {worst:.1e}, planted outlier flagged in {hits}/20 seeds, flag counts exact: {counts_ok}"),
    )
}

fn finegrained() -> Outcome {
    #[derive(serde::Deserialize)]
    struct Line {
        frame_id: u64,
        description: DescriptionFields,
    }
    #[derive(serde::Deserialize)]
    struct Frozen {
        labels: ethokit::finegrained::FineGrainedLabels,
        lexicon: String,
    }
    let corpus: Vec<(u64, BehaviorDescription)> = read_jsonl::<Line>(&common::data("finegrained_golden.jsonl"))
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|l| (l.frame_id, BehaviorDescription::from_fields(l.description)))
        .collect();
    let frames: Vec<(u64, &BehaviorDescription)> = corpus.iter().map(|(f, d)| (*f, d)).collect();
    let first = classify_frames(&frames, Lexicon::seed(), &OfflineAssigner);
    let frozen: Frozen =
        serde_json::from_str(&std::fs::read_to_string(common::data("finegrained_golden_labels.json")).unwrap()).unwrap();
    let matches_frozen = first.labels == frozen.labels && first.lexicon.to_toml() == frozen.lexicon;
    let replay = classify_frames(&frames, first.lexicon.clone(), &DisabledAssigner);
    let replay_ok = replay.labels.frames == first.labels.frames && replay.errors.is_empty();
    check(
        corpus.len() == 50 && matches_frozen && replay_ok,
        format!("{} descriptions, frozen labels match: {matches_frozen}, replay identical: {replay_ok}", corpus.len()),
    )
}

fn phenotype() -> Outcome {
    let cohort = common::separable_cohort(4);
    let opts = PredictOptions::default();
    let loo = leave_one_out(&cohort, &opts).map_err(|e| e.to_string())?;
    let correct = loo.iter().filter(|p| p.actual.as_deref() == Some(p.predicted.as_str())).count();

    // Separation of the cohort itself, on features standardized over everyone.
    let names: Vec<&String> = cohort[0].features.keys().collect();
    let z = |p: &PhenotypeProfile| -> Vec<f64> {
        names
            .iter()
            .map(|f| {
                let xs: Vec<f64> = cohort.iter().map(|q| q.features[*f]).collect();
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
                (p.features[*f] - m) / sd
            })
            .collect()
    };
    let mut groups: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for p in &cohort {
        groups.entry(p.group.as_deref().unwrap()).or_default().push(z(p));
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let centroid = |m: &Vec<Vec<f64>>| -> Vec<f64> { (0..names.len()).map(|i| m.iter().map(|v| v[i]).sum::<f64>() / m.len() as f64).collect() };
    let cents: Vec<Vec<f64>> = groups.values().map(centroid).collect();
    let spread = groups.values().zip(&cents).flat_map(|(m, c)| m.iter().map(move |v| dist(v, c))).fold(0.0, f64::max);
    let mut gap = f64::INFINITY;
    for i in 0..cents.len() {
        for j in i + 1..cents.len() {
            gap = gap.min(dist(&cents[i], &cents[j]));
        }
    }

    let mut same = cohort[5].clone();
    same.subject = "probe".into();
    let p = predict_phenotype(&same, &cohort, &opts).map_err(|e| e.to_string())?;
    let zero = p.distances.iter().find(|d| d.reference == cohort[5].subject).map(|d| d.distance);

    let pairs: Vec<(String, String)> = loo.iter().map(|p| (p.actual.clone().unwrap(), p.predicted.clone())).collect();
    let m = prediction_matrix(&pairs);
    let rows_ok = m.rows.values().all(|r| (r.values().sum::<f64>() - 1.0).abs() <= 1e-9);
    let csv = m.to_csv();
    let header_ok = csv.lines().next() == Some(&*format!("predicted,{}", m.rows.keys().cloned().collect::<Vec<_>>().join(",")));
    let body_ok = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect::<Vec<_>>() == m.groups;
    check(
        correct == 24 && gap >= 4.0 * spread && zero == Some(0.0) && rows_ok && header_ok && body_ok,
        format!(
            "LOO {correct}/24 (gap {gap:.2} vs spread {spread:.2}), identical reference distance {zero:?}, rows sum to 1: {rows_ok}, rows predicted x columns actual: {}",
            header_ok && body_ok
        ),
    )
}

fn ingest() -> Outcome {
    #[derive(serde::Deserialize)]
    struct Case {
        raw: String,
        expect: String,
        #[serde(default)]
        keywords: Vec<String>,
    }
    let cases: Vec<Case> = read_jsonl(&common::data("extraction_corpus.jsonl")).map_err(|e| e.to_string())?;
    let (mut good, mut bad, mut right) = (0, 0, 0);
    for c in &cases {
        if c.expect == "ok" {
            good += 1;
        } else {
            bad += 1;
        }
        right += match extract_json(&c.raw) {
            Ok(d) => (c.expect == "ok" && d.keywords == c.keywords) as usize,
            Err(e) => (e.class() == c.expect) as usize,
        };
    }
    check(good == 30 && bad == 20 && right == 50, format!("{right}/{} correct ({good} well-formed, {bad} malformed)", cases.len()))
}

struct Fixture {
    session: Session,
    wall_s: f64,
}

fn fixture(dir: &Path, jobs: usize) -> Result<Fixture, String> {
    generate_session(dir, &SynthConfig::default()).map_err(|e| e.to_string())?;
    let session = Session::open(dir).map_err(|e| e.to_string())?;
    let config = PipelineConfig { jobs, ..Default::default() };
    let clock = Instant::now();
    run_all(&session, &config, "lying down").map_err(|e| e.to_string())?;
    Ok(Fixture { session, wall_s: clock.elapsed().as_secs_f64() })
}

fn fixture_clusters(f: &Fixture, identical: bool) -> Outcome {
    let s = &f.session;
    let (frames, _) = stages::load_frames(s).map_err(|e| e.to_string())?;
    let model: ethokit::clustering::ClusterModel =
        serde_json::from_str(&std::fs::read_to_string(s.artifact(stages::CLUSTER_MODEL)).unwrap()).unwrap();
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for a in &model.assignments {
        *sizes.entry(*a).or_default() += 1;
    }
    let all: BTreeSet<u64> = frames.iter().map(|f| f.frame_index).collect();
    let covered: BTreeSet<u64> = model.frame_ids.iter().copied().collect();
    let min = sizes.values().copied().min().unwrap_or(0);
    let complete = covered == all && model.assignments.len() == model.frame_ids.len();
    check(
        min >= model.params.theta_e && complete && identical,
        format!(
            "{} clusters, smallest {min} (theta_e {}), partition complete: {complete}, identical across runs and jobs: {identical}",
            sizes.len(),
            model.params.theta_e
        ),
    )
}

fn fixture_search(f: &Fixture) -> Outcome {
    let s = &f.session;
    let (store, _) = stages::load_store(s).map_err(|e| e.to_string())?;
    let (descs, _) = stages::load_descriptions(s).map_err(|e| e.to_string())?;
    let provider = OfflineProvider::new(store.dim());
    let mut by_text: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for id in store.ids() {
        if let Some(d) = descs.get(&id) {
            by_text.entry(d.description().embedding_text()).or_default().push(id);
        }
    }
    let (mut ok, mut total, mut monotone) = (0, 0, true);
    for (text, ids) in &by_text {
        let hits = search(text, &store, &provider).map_err(|e| e.to_string())?;
        monotone &= hits.windows(2).all(|w| w[0].similarity >= w[1].similarity);
        let top: BTreeSet<u64> = hits.iter().take_while(|h| h.similarity == 1.0).map(|h| h.frame_id).collect();
        total += ids.len();
        ok += ids.iter().filter(|i| top.contains(i)).count();
    }
    let expected = search("lying down", &store, &provider).map_err(|e| e.to_string())?;
    let persisted: Vec<(usize, u64, f64)> = std::fs::read_to_string(s.artifact(stages::SEARCH_RANKING))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[0].parse().unwrap(), c[1].parse().unwrap(), c[2].parse().unwrap())
        })
        .collect();
    let persist_ok = persisted.len() == store.len()
        && persisted.iter().zip(&expected).enumerate().all(|(i, (p, e))| p.0 == i + 1 && p.1 == e.frame_id && p.2 == e.similarity);
    check(
        ok == total && total == store.len() && monotone && persist_ok,
        format!("{ok}/{total} stored descriptions retrieve themselves at similarity 1.0, monotone: {monotone}, full ranking persisted: {persist_ok}"),
    )
}

fn fixture_anomaly(f: &Fixture) -> Outcome {
    let rep: NoveltyReport = serde_json::from_str(&std::fs::read_to_string(f.session.artifact(stages::NOVELTY)).unwrap()).unwrap();
    let want = rep.frames.div_ceil(10_000);
    let ok = rep.flagged_per_run.iter().all(|r| r.len() == want);
    check(ok, format!("{} runs over {} frames each flag exactly {want}", rep.flagged_per_run.len(), rep.frames))
}

fn fixture_pipeline(f: &Fixture, rerun_identical: bool) -> Outcome {
    let s = &f.session;
    let missing: Vec<&str> = [
        stages::FRAMES, stages::BBOXES, stages::POSES, stages::VELOCITY, stages::DESCRIPTIONS, stages::ANNOTATION_LOG,
        stages::EMBEDDINGS, stages::EMBEDDINGS_META, stages::CLUSTERS, stages::CLUSTER_REPORT, stages::CLUSTER_MODEL,
        stages::FINEGRAINED, stages::FINEGRAINED_DETAIL, stages::LEXICON, stages::INFOCARD, stages::NOVELTY, stages::SEARCH,
        stages::SEARCH_RANKING, stages::ETHOGRAM, stages::WINDOWS, stages::PROPORTIONS, stages::OCCUPANCY, stages::PROFILE,
        stages::PREDICTION, stages::PREDICTION_MATRIX,
    ]
    .into_iter()
    .filter(|a| !s.artifact(a).exists())
    .collect();
    let manifests = CHAIN.iter().chain(&["ethogram", "search"]).filter(|c| !s.manifest_path(c).exists()).count();
    let (frames, _) = stages::load_frames(s).map_err(|e| e.to_string())?;
    check(
        frames.len() == 6000 && f.wall_s < 600.0 && missing.is_empty() && manifests == 0 && rerun_identical,
        format!(
            "{} frames in {:.1} s, missing artifacts {missing:?}, missing manifests {manifests}, rerun byte-identical: {rerun_identical}",
            frames.len(),
            f.wall_s
        ),
    )
}

fn report(name: &str, outcome: Outcome, failed: &mut usize) {
    match outcome {
        Ok(d) => println!("PASS  {name:<14} {d}"),
        Err(d) => {
            *failed += 1;
            println!("FAIL  {name:<14} {d}");
        }
    }
}

fn main() -> ExitCode {
    let mut failed = 0;
    report("triangulation", triangulation(), &mut failed);
    report("kinematics", kinematics(), &mut failed);

    let tmp = tempfile::tempdir().unwrap();
    let a = fixture(&tmp.path().join("a"), 4);
    let b = fixture(&tmp.path().join("b"), 1);
    let (a, b) = match (a, b) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            println!("FAIL  fixture        {e}");
            return ExitCode::FAILURE;
        }
    };
    let first = common::artifact_digests(&a.session.root);
    let across_jobs = first == common::artifact_digests(&b.session.root);
    let config = PipelineConfig { jobs: 4, ..Default::default() };
    let rerun = run_all(&a.session, &config, "lying down").is_ok() && first == common::artifact_digests(&a.session.root);

    let cluster_line = blobs().and_then(|d| fixture_clusters(&a, across_jobs && rerun).map(|f| format!("{d}; fixture {f}")));
    report("clustering", cluster_line, &mut failed);
    report("isolation", forest().and_then(|d| fixture_anomaly(&a).map(|f| format!("{d}; fixture {f}"))), &mut failed);
    report("finegrained", finegrained(), &mut failed);
    report("search", fixture_search(&a), &mut failed);
    report("phenotype", phenotype(), &mut failed);
    report("pipeline", fixture_pipeline(&a, rerun), &mut failed);
    report("ingest", ingest(), &mut failed);

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
