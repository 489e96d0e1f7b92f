use std::path::Path;
use std::process::{Command, Output};

fn ethokit(session: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ethokit"))
        .arg("--session")
        .arg(session)
        .args(args)
        .output()
        .unwrap()
}

fn synth(dir: &Path) {
    let out = ethokit(dir, &["synth", "--out", dir.to_str().unwrap(), "--duration-s", "60"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let small = "[cluster]\ntheta_c = 4\ntheta_e = 10\n";
    std::fs::write(dir.join("pipeline.toml"), small).unwrap();
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_calibration_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    assert!(ethokit(tmp.path(), &["--offline", "ingest"]).status.success());
    std::fs::remove_file(tmp.path().join("calibration.json")).unwrap();
    let out = ethokit(tmp.path(), &["--offline", "triangulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibration.json"));
}

#[test]
fn not_a_session() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ethokit(tmp.path(), &["ingest"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ethokit(tmp.path(), &["cluster", "--theta-c", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_search_and_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path();
    synth(s);
    let cfg = s.join("pipeline.toml");
    let cfg = cfg.to_str().unwrap();
    for stage in ["ingest", "triangulate", "velocity", "annotate", "embed"] {
        let out = ethokit(s, &["--offline", "--config", cfg, stage]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).starts_with(stage));
        assert!(s.join("artifacts/manifests").join(format!("{stage}.json")).exists());
    }
    let first = std::fs::read(s.join("artifacts/embeddings.ekvs")).unwrap();

    let out = ethokit(s, &["--offline", "--config", cfg, "search", "--query", "Mouse is lying down on the ground"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6, "{text}");
    assert!(lines[0].starts_with("rank,frame_index,time_s,similarity"));
    for (i, l) in lines[1..].iter().enumerate() {
        assert!(l.starts_with(&format!("{},", i + 1)));
    }

    let out = ethokit(s, &["--offline", "--config", cfg, "--jobs", "1", "embed"]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(s.join("artifacts/embeddings.ekvs")).unwrap(), first);

    let out = ethokit(s, &["--offline", "--config", cfg, "cluster", "--theta-e", "100000"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ethokit(s, &["--offline", "--config", cfg, "cluster"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
