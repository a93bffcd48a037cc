use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus9() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/corpus9/manifest.toml")
}

fn secite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_secite"))
        .args(args)
        .env_remove("SECITE_EMBED_TOKEN")
        .env_remove("SECITE_GEN_TOKEN")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_offline_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = secite(&[
        "run",
        "--manifest",
        corpus9().to_str().unwrap(),
        "--out",
        out,
        "--offline",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("7/9 parsed"), "{stdout}");
    for name in [
        "contexts.json",
        "clusters.json",
        "projection.json",
        "clusters.svg",
        "summaries.json",
        "report.json",
        "report.md",
    ] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
}

#[test]
fn cluster_without_extract_names_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = secite(&[
        "cluster",
        "--out",
        dir.path().to_str().unwrap(),
        "--offline",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("contexts.json not found"), "{err}");
    assert!(err.contains("`extract`"), "{err}");
}

#[test]
fn stages_hand_off_through_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let manifest = corpus9();
    let manifest = manifest.to_str().unwrap();
    for stage in ["extract", "cluster", "project", "summarize"] {
        let o = secite(&[stage, "--manifest", manifest, "--out", out, "--offline"]);
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", stderr(&o));
    }
    let o = secite(&[
        "evaluate",
        "--manifest",
        manifest,
        "--out",
        out,
        "--offline",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["extraction"]["documents_parsed"], 7);
}

#[test]
fn rerunning_extract_clears_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let manifest = corpus9();
    let manifest = manifest.to_str().unwrap();
    secite(&["run", "--manifest", manifest, "--out", out, "--offline"]);
    let o = secite(&["extract", "--manifest", manifest, "--out", out, "--offline"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("contexts.json").is_file());
    assert!(!dir.path().join("clusters.json").exists());
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn tiny_corpus_projects_with_fallback_warning() {
    let dir = tempfile::tempdir().unwrap();
    let doc = "Intro\nWe build on ReplayLog [1]. ReplayLog [1] is fast. Unlike ReplayLog [1], we need no logs.\n\n\
               References\n[1] A. Author. ReplayLog: Reproducing Concurrency Failures. 2020.\n";
    fs::write(dir.path().join("d.txt"), doc).unwrap();
    fs::write(
        dir.path().join("m.toml"),
        "[target]\nid = \"replaylog\"\ntitle = \"ReplayLog: Reproducing Concurrency Failures\"\n\n\
         [[documents]]\nid = \"d\"\npath = \"d.txt\"\n",
    )
    .unwrap();
    let manifest = dir.path().join("m.toml");
    let out = dir.path().join("out");
    let (m, o) = (manifest.to_str().unwrap(), out.to_str().unwrap());
    for stage in ["extract", "cluster"] {
        let r = secite(&[stage, "--manifest", m, "--out", o, "--offline", "--k", "2"]);
        assert_eq!(r.status.code(), Some(0), "{stage}: {}", stderr(&r));
    }
    let r = secite(&["project", "--out", o, "--offline", "--k", "2"]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    assert!(stderr(&r).contains("collinear"), "{}", stderr(&r));
}

#[test]
fn k_below_two_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = secite(&[
        "run",
        "--manifest",
        corpus9().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--offline",
        "--k",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn online_without_generator_is_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = secite(&[
        "run",
        "--manifest",
        corpus9().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(dir.path().join("report.md").is_file());
}
