use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use secite::evaluate::StageStatus;
use secite::pipeline::{
    run_pipeline, stage_cluster, stage_extract, ClustersArtifact, EmbeddedText, RunConfig,
    REPORT_JSON_FILE,
};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn offline(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(Some(fixture("corpus9/manifest.toml")), out);
    cfg.offline = true;
    cfg
}

fn masked_report(dir: &Path) -> Value {
    let mut v: Value =
        serde_json::from_str(&fs::read_to_string(dir.join(REPORT_JSON_FILE)).unwrap()).unwrap();
    v["generated_at"] = Value::Null;
    v
}

#[test]
fn repeated_runs_are_identical_except_timestamp() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&offline(a.path())).unwrap();
    run_pipeline(&offline(b.path())).unwrap();
    assert_eq!(masked_report(a.path()), masked_report(b.path()));
    for name in [
        "contexts.json",
        "clusters.json",
        "projection.json",
        "clusters.svg",
        "summaries.json",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn offline_run_records_fulltext_as_not_run() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&offline(dir.path())).unwrap();
    assert_eq!(report.exit_code(), 0);
    for stage in ["fulltext_positive", "fulltext_negative", "similarity"] {
        let rec = report.stages.iter().find(|s| s.stage == stage).unwrap();
        assert_eq!(rec.status, StageStatus::NotRun, "{stage}");
    }
    assert!(report.similarity.is_empty());
    assert_eq!(report.mean_similarity, None);
    let md = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("Selected k: 2") || md.contains("Selected k: 3"));
}

#[test]
fn manual_contexts_are_merged() {
    let dir = tempfile::tempdir().unwrap();
    let manual = dir.path().join("manual.tsv");
    fs::write(
        &manual,
        "# hand-checked table rows\ntruncated\tLog-based reproduction [4] is of limited use for embedded systems.\nsurvey\tno marker here\n",
    )
    .unwrap();
    let mut cfg = offline(&dir.path().join("out"));
    cfg.manual_contexts = Some(manual);
    let artifact = stage_extract(&cfg).unwrap();
    let manual: Vec<_> = artifact
        .extraction
        .contexts
        .iter()
        .filter(|c| c.manual)
        .collect();
    assert_eq!(manual.len(), 1);
    assert_eq!(manual[0].doc_id, "truncated");
    assert!(artifact
        .warnings
        .iter()
        .any(|w| w.contains("no numeric citation marker")));
}

#[test]
fn embedding_text_switch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = offline(dir.path());
    stage_extract(&cfg).unwrap();
    let original: ClustersArtifact = stage_cluster(&cfg).unwrap();
    assert_eq!(original.embedded_text, EmbeddedText::Original);
    cfg.embed_cleaned = true;
    cfg.normalize = true;
    let cleaned = stage_cluster(&cfg).unwrap();
    assert_eq!(cleaned.embedded_text, EmbeddedText::Cleaned);
    assert!(cleaned.normalized);
    assert_ne!(original.embeddings, cleaned.embeddings);
    assert_eq!(original.embeddings.len(), cleaned.embeddings.len());
}

#[test]
fn infeasible_k_is_dropped_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = offline(dir.path());
    cfg.ks = vec![2, 100];
    stage_extract(&cfg).unwrap();
    let c = stage_cluster(&cfg).unwrap();
    assert_eq!(c.silhouette_by_k.keys().copied().collect::<Vec<_>>(), [2]);
    assert!(c.warnings.iter().any(|w| w.contains("k=100")));
}

#[test]
fn unlabelable_k_is_a_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = offline(dir.path());
    cfg.ks = vec![4];
    let report = run_pipeline(&cfg).unwrap();
    let label = report.stages.iter().find(|s| s.stage == "label").unwrap();
    assert_eq!(label.status, StageStatus::Failed);
    assert_eq!(report.exit_code(), 2);
}

#[test]
fn bad_manifest_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.toml");
    fs::write(&manifest, "[target]\nid = \"x\"\n").unwrap();
    let cfg = RunConfig::new(Some(manifest), dir.path().join("out"));
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(err.is_fatal());
}
