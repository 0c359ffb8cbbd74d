use std::path::PathBuf;
use std::sync::Arc;

use signalforge_client::ReviewClient;
use signalforge_core::alignment::{AlignParams, AlignmentStatus, Decision};
use signalforge_core::pipeline::{start_run, RunConfig, RunMode};
use signalforge_core::provider::{RuleBackend, StructuredProvider};
use signalforge_service::{router, serve, AppState};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/ambiguous").join(name)
}

#[tokio::test]
async fn client_drives_review_over_http() {
    let root = tempfile::tempdir().unwrap();
    let config = RunConfig {
        mode: RunMode::Interactive,
        params: AlignParams { theta: 0.45, ..AlignParams::default() },
        ..RunConfig::default()
    };
    let provider = StructuredProvider::new(RuleBackend::new());
    start_run(root.path(), "c1", &fixture("catalog.yaml"), &fixture("api.yaml"), config, &provider).unwrap();

    let state = AppState::open(&root.path().join("c1"), Arc::new(StructuredProvider::new(RuleBackend::new()))).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, router(Arc::new(state), None), async {
        rx.await.ok();
    }));

    let client = ReviewClient::new(&format!("http://{addr}/"));
    let page = client.list(Some(AlignmentStatus::Flagged), 0, 10).await.unwrap();
    assert_eq!(page.items.len(), 1);
    let item = client.regenerate("wiperMode", "prefer-signal WiprRrSt", "ana").await.unwrap();
    assert_eq!(item.alignment.signals, ["WiprRrSt"]);
    let err = client.regenerate("wiperMode", "", "ana").await.unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(400));
    client.decide("wiperMode", Decision::Approve, "ana").await.unwrap();
    let err = client.decide("wiperMode", Decision::Reject, "ana").await.unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(409));
    let run = client.resume("c1").await.unwrap();
    assert!(run.is_complete());
    let code = client.artifact_code("get_vehicles_vin_wipers").await.unwrap();
    assert!(code.contains("read_WiprRrSt"), "{code}");
    assert!(client.run("c1").await.unwrap().is_complete());

    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}
