use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use physiobus::recorder::list_log;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_physiobus"));
    c.env("RUST_LOG", "warn");
    c
}

fn demo_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/demo.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn free_addr() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

/// A child process killed on drop.
struct Guard(Child);

impl Drop for Guard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_bus() -> (Guard, String) {
    let addr = free_addr();
    let child = bin().args(["bus", "--listen", &addr]).stderr(Stdio::null()).spawn().unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    while TcpStream::connect(&addr).is_err() {
        assert!(Instant::now() < deadline, "broker did not come up");
        std::thread::sleep(Duration::from_millis(20));
    }
    (Guard(child), addr)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["launch", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["record", "--out", "x.log"]).status.code(), Some(1));
    let out = run(&["describe", "fnirs"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fnirs"));
}

#[test]
fn describe_prints_indicators() {
    let out = run(&["describe", "ecg"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "mental_emotional_stress\nphysical_effort\n");
}

#[test]
fn unknown_kind_aborts_before_starting() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"nodes":[
            {"kind":"ecg_driver","human_id":"p1","sensor_id":"chest"},
            {"kind":"eeg_driver_x","human_id":"p1","sensor_id":"cap"}]}"#,
    )
    .unwrap();
    let out = run(&["launch", path.to_str().unwrap(), "--echo", "/**"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("eeg_driver_x"), "{stderr}");
    assert!(!stderr.contains("launched"), "{stderr}");
    assert!(out.stdout.is_empty());
}

#[test]
fn unreachable_broker_is_a_runtime_error() {
    let addr = free_addr();
    assert_eq!(run(&["list", "--bus", &addr]).status.code(), Some(2));
}

#[test]
fn tools_against_a_running_demo() {
    let (_bus, addr) = start_bus();
    let _launch = Guard(
        bin().args(["launch", demo_config().to_str().unwrap(), "--bus", &addr]).stderr(Stdio::null()).spawn().unwrap(),
    );

    let out = bin()
        .args(["echo", "/humans/physiological/p1/ecg/chest/features", "--count", "2", "--bus", &addr])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 2, "{stdout}");
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["schema"], "EcgFeatures");
        assert!(v["data"]["heart_rate_bpm"].as_f64().unwrap() > 0.0);
    }

    let out = run(&["param", "get", "ecg_interpreter_p1_chest", "window_s", "--bus", &addr]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "60.0");
    let out = run(&["param", "get", "ecg_driver_p1_chest", "sampling_frequency_hz", "--bus", &addr]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "250.0");
    assert_eq!(run(&["param", "get", "ghost", "x", "--bus", &addr]).status.code(), Some(2));

    let out = run(&["list", "--bus", &addr]);
    let listing = String::from_utf8_lossy(&out.stdout);
    assert!(listing.contains("/humans/physiological/p1/ecg/chest/raw\tPhysioRaw\tecg_driver_p1_chest"), "{listing}");
    assert!(listing.contains("/humans/affective_state/p1\tAffectiveState\tfusion_p1"), "{listing}");

    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("session.log");
    let out = run(&[
        "record",
        "--out",
        log.to_str().unwrap(),
        "--duration",
        "2",
        "/humans/physiological/p1/**",
        "/humans/affective_state/p1",
        "--bus",
        &addr,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = list_log(&log).unwrap();
    // Two seconds of 5 Hz raw blocks from two sensors, plus features.
    assert!(summary.records >= 15, "{summary:?}");
    assert!(summary.topics.contains_key("/humans/physiological/p1/ecg/chest/raw"));
    assert!(summary.metadata.iter().any(|(k, _)| k == "patterns"));

    // Replaying into the same broker would clash with the live publishers,
    // so a fresh broker takes it.
    let (_bus2, addr2) = start_bus();
    let echo = bin()
        .args(["echo", "/humans/physiological/p1/ecg/chest/raw", "--count", "1", "--bus", &addr2])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    std::thread::sleep(Duration::from_millis(500));
    let out = run(&["replay", log.to_str().unwrap(), "--rate", "4", "--bus", &addr2]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = echo.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"schema\":\"PhysioRaw\""));
}
