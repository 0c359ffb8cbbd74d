use std::path::{Path, PathBuf};

use signalforge_core::alignment::{AlignParams, AlignmentStatus, Decision};
use signalforge_core::pipeline::{artifact_digests, resume_run, regenerate_item, start_run, PipelineRun, RunConfig, RunMode, Stage, StageStatus};
use signalforge_core::provider::{RuleBackend, StructuredProvider};
use signalforge_core::review::ReviewStore;

fn fixture(corpus: &str, name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(corpus).join(name)
}

fn config(mode: RunMode) -> RunConfig {
    RunConfig {
        mode,
        params: AlignParams { theta: 0.45, ..AlignParams::default() },
        jobs: 4,
        ..RunConfig::default()
    }
}

fn run(root: &Path, id: &str, corpus: &str, mode: RunMode) -> PipelineRun {
    let provider = StructuredProvider::new(RuleBackend::new());
    start_run(root, id, &fixture(corpus, "catalog.yaml"), &fixture(corpus, "api.yaml"), config(mode), &provider).unwrap()
}

#[test]
fn clean_fixture_completes_in_auto_mode() {
    let root = tempfile::tempdir().unwrap();
    let r = run(root.path(), "a", "spapi", RunMode::Auto);
    assert!(r.is_complete(), "{:#?}", r.stages);
    assert!(r.flagged.is_empty());
    let dir = root.path().join("a");
    for key in ["get_vehicles_vin_body", "get_vehicles_vin_climate", "put_vehicles_vin_climate", "get_vehicles_vin_driving", "get_vehicles_vin_energy"] {
        assert!(dir.join("endpoints").join(format!("{key}.txt")).exists(), "{key}");
    }
    let starts: Vec<String> = Stage::ALL.iter().map(|s| r.stage(*s).started_at.clone().unwrap()).collect();
    let ends: Vec<String> = Stage::ALL.iter().map(|s| r.stage(*s).finished_at.clone().unwrap()).collect();
    assert!(ends[0] <= starts[1] && ends[1] <= starts[2]);
}

#[test]
fn two_runs_produce_identical_artifacts() {
    let root = tempfile::tempdir().unwrap();
    run(root.path(), "one", "spapi", RunMode::Auto);
    run(root.path(), "two", "spapi", RunMode::Auto);
    let a = artifact_digests(&root.path().join("one")).unwrap();
    let b = artifact_digests(&root.path().join("two")).unwrap();
    assert!(a.len() > 20);
    assert_eq!(a, b);
}

#[test]
fn ambiguous_property_blocks_then_resumes_after_approval() {
    let root = tempfile::tempdir().unwrap();
    let r = run(root.path(), "i", "ambiguous", RunMode::Interactive);
    assert!(r.is_blocked());
    assert_eq!(r.flagged, ["wiperMode"]);
    assert_eq!(r.stage(Stage::Endpoint).status, StageStatus::Pending);
    let dir = root.path().join("i");
    assert!(!dir.join("endpoints").exists());

    let provider = StructuredProvider::new(RuleBackend::new());
    let again = resume_run(&dir, &provider).unwrap();
    assert!(again.is_blocked(), "resume without a decision stays blocked");

    let mut store = ReviewStore::open(&dir).unwrap();
    store.decide("wiperMode", Decision::Approve, "reviewer").unwrap();
    drop(store);
    let done = resume_run(&dir, &provider).unwrap();
    assert!(done.is_complete(), "{:#?}", done.stages);
    assert!(dir.join("endpoints/get_vehicles_vin_wipers.txt").exists());
}

#[test]
fn auto_mode_excludes_flagged_and_rejection_keeps_it_out() {
    let root = tempfile::tempdir().unwrap();
    let r = run(root.path(), "x", "ambiguous", RunMode::Auto);
    assert!(r.is_complete());
    assert!(r.excluded.contains_key("wiperMode"));
    let dir = root.path().join("x");
    assert!(!dir.join("endpoints/get_vehicles_vin_wipers.txt").exists());
    assert!(dir.join("endpoints/get_vehicles_vin_body.txt").exists());

    let mut store = ReviewStore::open(&dir).unwrap();
    store.decide("wiperMode", Decision::Reject, "reviewer").unwrap();
    drop(store);
    let provider = StructuredProvider::new(RuleBackend::new());
    let r = resume_run(&dir, &provider).unwrap();
    assert!(r.is_complete());
    assert!(!dir.join("endpoints/get_vehicles_vin_wipers.txt").exists());
}

#[test]
fn regeneration_with_preference_then_approval_generates_endpoint() {
    let root = tempfile::tempdir().unwrap();
    run(root.path(), "g", "ambiguous", RunMode::Interactive);
    let dir = root.path().join("g");
    let provider = StructuredProvider::new(RuleBackend::new());
    let mut store = ReviewStore::open(&dir).unwrap();
    let item = regenerate_item(&dir, &mut store, "wiperMode", "prefer-signal WiprFrntSt", "reviewer", &provider).unwrap();
    assert_eq!(item.alignment.signals, ["WiprFrntSt"]);
    assert_eq!(item.history.last().unwrap().constraint.as_deref(), Some("prefer-signal WiprFrntSt"));
    // Retrieval margins are unchanged, so the item still needs a decision.
    assert_eq!(item.status(), AlignmentStatus::Flagged);
    assert!(item.codec_preview.contains("read_WiprFrntSt"));
    store.decide("wiperMode", Decision::Approve, "reviewer").unwrap();
    drop(store);
    let r = resume_run(&dir, &provider).unwrap();
    assert!(r.is_complete());
    let manifest = std::fs::read_to_string(dir.join("endpoints/get_vehicles_vin_wipers.manifest.json")).unwrap();
    assert!(manifest.contains("WiprFrntSt"));
}
