use std::io::Write;
use std::process::{Command, Output, Stdio};

fn bloom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bloom")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn calibrate_finds_resonance() {
    let out = bloom(&["calibrate", "--seed", "3", "--rates", "4.5,5.5,6.5", "--record-s", "90"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("resonance 5.5 bpm"), "{text}");
    assert_eq!(text.lines().filter(|l| l.trim_start().starts_with(['4', '5', '6'])).count(), 3);
}

#[test]
fn simulate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    let out = bloom(&["simulate", "--condition", "focus-static", "--seed", "2", "--subjects", "2", "--out", logs.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(&logs).unwrap().count(), 2);

    let report = dir.path().join("report");
    let out = bloom(&["analyze", "--in", logs.to_str().unwrap(), "--out", report.to_str().unwrap(), "--nperm", "200"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.txt", "report.csv", "report.json", "dataset.csv", "diagnostics.txt"] {
        assert!(report.join(f).is_file(), "{f}");
    }
    let dataset = std::fs::read_to_string(report.join("dataset.csv")).unwrap();
    assert!(dataset.contains("S01") && dataset.contains("S02") && !dataset.contains("S03"));
}

#[test]
fn replay_from_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_bloom"))
        .args(["replay", "--file", "-", "--delta", "10"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"{\"t_ms\":1,\"ibi_ms\":1000}\nnot json\n{\"t_ms\":1001,\"ibi_ms\":1000}\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let rows: Vec<serde_json::Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["hr_bpm"], 60.0);
    assert_eq!(rows[0]["br_bpm"], 6.0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("3 lines, 2 accepted, 1 malformed"));
}

#[test]
fn failures_exit_nonzero() {
    assert!(!bloom(&["simulate", "--condition", "sideways", "--subjects", "1"]).status.success());
    assert!(!bloom(&["replay", "--file", "/nonexistent.csv"]).status.success());

    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let out = bloom(&["serve", "--port", &port]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot listen"));
}
