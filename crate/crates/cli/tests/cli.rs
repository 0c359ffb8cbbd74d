use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(corpus: &str, name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(corpus).join(name)
}

fn sf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signalforge"))
        .args(args)
        .env_remove("SIGNALFORGE_LLM_URL")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn valid_catalog_exits_zero() {
    let out = sf(&["catalog", "validate", p(&fixture("spapi", "catalog.yaml"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn malformed_catalog_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("c.yaml");
    std::fs::write(&f, "signals:\n  - name: A\n    kind: numerical\n    bit_start: [oops]\n").unwrap();
    assert_eq!(code(&sf(&["catalog", "validate", p(&f)])), 2);
}

#[test]
fn inconsistent_catalog_is_an_invariant_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("c.yaml");
    std::fs::write(&f, "signals:\n  - name: Spd\n    kind: numerical\n    bit_start: 60\n    bit_length: 8\n").unwrap();
    let out = sf(&["catalog", "validate", p(&f)]);
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("Spd") && err.contains("bit_length"), "{err}");
}

#[test]
fn usage_errors_exit_64_and_help_exits_zero() {
    assert_eq!(code(&sf(&["no-such-command"])), 64);
    assert_eq!(code(&sf(&["catalog"])), 64);
    assert_eq!(code(&sf(&["--help"])), 0);
    assert_eq!(code(&sf(&["status"])), 64, "status needs a run");
}

#[test]
fn injected_document_has_findings() {
    let dir = tempfile::tempdir().unwrap();
    let (doc, markers) = (dir.path().join("bad.yaml"), dir.path().join("markers.json"));
    let against = [fixture("spapi", "api.yaml"), fixture("spapi", "catalog.yaml")];
    let out = sf(&[
        "inject-errors",
        p(&fixture("spapi", "scenario.yaml")),
        "--against",
        p(&against[0]),
        p(&against[1]),
        "--out-of-range",
        "3",
        "--invalid-enum",
        "2",
        "--seed",
        "1",
        "--out",
        p(&doc),
        "--markers",
        p(&markers),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let clean = sf(&["check-spec", p(&fixture("spapi", "scenario.yaml")), "--against", p(&against[0]), p(&against[1])]);
    assert_eq!(code(&clean), 0, "{}", stdout(&clean));
    let dirty = sf(&["check-spec", p(&doc), "--against", p(&against[0]), p(&against[1]), "--markers", p(&markers)]);
    assert_eq!(code(&dirty), 4);
    assert_eq!(stdout(&dirty).lines().filter(|l| l.starts_with("$.")).count(), 5, "{}", stdout(&dirty));
}

#[test]
fn blocked_run_is_reviewed_through_the_embedded_service() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let out = sf(&[
        "run",
        p(&fixture("ambiguous", "catalog.yaml")),
        p(&fixture("ambiguous", "api.yaml")),
        "--config",
        p(&fixture("ambiguous", "run.yaml")),
        "--runs-dir",
        p(&runs),
        "--run-id",
        "r1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let loc = ["--run", "r1", "--runs-dir", p(&runs)];
    let with = |head: &[&str], tail: &[&str]| sf(&[head, &loc[..], tail].concat());

    let list = with(&["review"], &["list"]);
    assert_eq!(code(&list), 0, "{}", stderr(&list));
    assert!(stdout(&list).contains("wiperMode"));

    assert_eq!(code(&with(&["review"], &["show", "nope"])), 4);
    assert_eq!(code(&with(&["review"], &["approve", "wiperMode"])), 0);
    assert_eq!(code(&with(&["review"], &["approve", "wiperMode"])), 4, "second decision conflicts");

    let resumed = with(&["resume"], &[]);
    assert_eq!(code(&resumed), 0, "{}", stderr(&resumed));
    let status = stdout(&with(&["status"], &[]));
    assert!(status.lines().all(|l| !l.contains("blocked") && !l.contains("pending")), "{status}");
    let code_out = with(&["review"], &["code", "get_vehicles_vin_wipers"]);
    assert_eq!(code(&code_out), 0, "{}", stderr(&code_out));
    assert!(stdout(&code_out).contains("/vehicles/{vin}/wipers"));
}
