use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use signalforge_core::alignment::AlignParams;
use signalforge_core::pipeline::{start_run, RunConfig, RunMode};
use signalforge_core::provider::{FaultClass, FaultInjectingBackend, FaultSchedule, RuleBackend, StructuredProvider};
use signalforge_service::{router, AppState};
use tower::ServiceExt;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/ambiguous").join(name)
}

fn blocked_run(root: &Path) -> PathBuf {
    let config = RunConfig {
        mode: RunMode::Interactive,
        params: AlignParams { theta: 0.45, ..AlignParams::default() },
        ..RunConfig::default()
    };
    let provider = StructuredProvider::new(RuleBackend::new());
    start_run(root, "r1", &fixture("catalog.yaml"), &fixture("api.yaml"), config, &provider).unwrap();
    root.join("r1")
}

fn app(dir: &Path) -> axum::Router {
    let state = AppState::open(dir, Arc::new(StructuredProvider::new(RuleBackend::new()))).unwrap();
    router(Arc::new(state), None)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

#[tokio::test]
async fn list_filter_decide_and_conflict() {
    let root = tempfile::tempdir().unwrap();
    let app = app(&blocked_run(root.path()));
    let (s, page) = call(&app, "GET", "/api/alignments?status=flagged", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(page["total"], 1);
    assert_eq!(page["items"][0]["id"], "wiperMode");
    let (_, empty) = call(&app, "GET", "/api/alignments?status=approved", None).await;
    assert_eq!(empty["total"], 0);
    let (s, _) = call(&app, "GET", "/api/alignments?status=bogus", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, item) = call(&app, "POST", "/api/alignments/wiperMode/decision", Some(json!({"action": "approve", "actor": "ana"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(item["alignment"]["status"], "approved");
    assert_eq!(item["history"].as_array().unwrap().len(), 2);
    let (s, body) = call(&app, "POST", "/api/alignments/wiperMode/decision", Some(json!({"action": "approve"}))).await;
    assert_eq!(s, StatusCode::CONFLICT, "{body}");
    let (s, _) = call(&app, "POST", "/api/alignments/nope/decision", Some(json!({"action": "reject"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/api/alignments/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn regenerate_validation_and_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let app = app(&blocked_run(root.path()));
    let (s, _) = call(&app, "POST", "/api/alignments/wiperMode/regenerate", Some(json!({"constraint": "  "}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, item) = call(
        &app,
        "POST",
        "/api/alignments/wiperMode/regenerate",
        Some(json!({"constraint": "prefer-signal WiprFrntSt", "actor": "ana"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(item["alignment"]["signals"], json!(["WiprFrntSt"]));
    assert_eq!(item["history"][1]["constraint"], "prefer-signal WiprFrntSt");

    let (s, code) = call(&app, "GET", "/api/artifacts/wiperMode/code", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(code.as_str().unwrap().contains("def read_WiprFrntSt"));
    let (s, _) = call(&app, "GET", "/api/artifacts/VehSpd/code", None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, "GET", "/api/artifacts/..%2Fmanifest/code", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn provider_failure_is_bad_gateway() {
    let root = tempfile::tempdir().unwrap();
    let dir = blocked_run(root.path());
    let failing = FaultInjectingBackend::new(RuleBackend::new(), vec![FaultClass::ProviderError], FaultSchedule::Always);
    let state = AppState::open(&dir, Arc::new(StructuredProvider::new(failing))).unwrap();
    let app = router(Arc::new(state), None);
    let (s, body) = call(&app, "POST", "/api/alignments/wiperMode/regenerate", Some(json!({"constraint": "mapping-kind direct"}))).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"], "provider");
    let (_, item) = call(&app, "GET", "/api/alignments/wiperMode", None).await;
    assert_eq!(item["history"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn run_status_and_resume() {
    let root = tempfile::tempdir().unwrap();
    let app = app(&blocked_run(root.path()));
    let (s, run) = call(&app, "GET", "/api/runs/r1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(run["stages"][1]["status"], "blocked_on_review");
    let (s, _) = call(&app, "GET", "/api/runs/other", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    call(&app, "POST", "/api/alignments/wiperMode/decision", Some(json!({"action": "approve"}))).await;
    let (s, run) = call(&app, "POST", "/api/runs/r1/resume", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(run["stages"][2]["status"], "done");
    assert!(root.path().join("r1/endpoints/get_vehicles_vin_wipers.txt").exists());
}

#[tokio::test]
async fn state_survives_reopen() {
    let root = tempfile::tempdir().unwrap();
    let dir = blocked_run(root.path());
    {
        let app = app(&dir);
        call(&app, "POST", "/api/alignments/wiperMode/decision", Some(json!({"action": "reject", "actor": "bo"}))).await;
    }
    let app = app(&dir);
    let (_, item) = call(&app, "GET", "/api/alignments/wiperMode", None).await;
    assert_eq!(item["alignment"]["status"], "rejected");
    assert_eq!(item["history"][1]["actor"], "bo");
}
