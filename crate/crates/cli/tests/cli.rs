use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn edgecpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgecpd")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&edgecpd(&["--help"])), 0);
    assert_eq!(code(&edgecpd(&["generate", "--no-such-flag"])), 1);
    assert_eq!(code(&edgecpd(&[])), 1);
    assert_eq!(code(&edgecpd(&["calibrate", "--gamma", "0.6"])), 1);
    assert_eq!(code(&edgecpd(&["detect", "--series", "x.csv", "--params", "{not json"])), 1);
}

#[test]
fn generate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |seed: &str, file: &str| {
        let o = edgecpd(&["--seed", seed, "--out", p(dir.path()), "generate", "--length", "300", "--t-cp", "150", "--file", file]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(dir.path().join(file)).unwrap()
    };
    let (a, b, c) = (gen("5", "a.csv"), gen("5", "b.csv"), gen("6", "c.csv"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.starts_with("seq,value\n1,"));
    assert_eq!(a.lines().count(), 301);
    let meta = fs::read_to_string(dir.path().join("a.meta.toml")).unwrap();
    assert!(meta.contains("t_cp = 150"), "{meta}");
}

#[test]
fn zero_shift_writes_no_change() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgecpd(&["--out", p(dir.path()), "generate", "--mean-shift", "0"]);
    assert_eq!(code(&o), 0);
    let meta = fs::read_to_string(dir.path().join("series.meta.toml")).unwrap();
    assert!(!meta.contains("t_cp"), "{meta}");
}

#[test]
fn calibrate_hits_cache_second_time() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cv.csv");
    let args = ["--seed", "3", "calibrate", "--grid", "1000", "--replications", "10000", "--cv-cache", p(&cache)];
    let first = stdout(&edgecpd(&args));
    let second = stdout(&edgecpd(&args));
    assert!(first.trim_end().ends_with("computed"), "{first}");
    assert!(second.trim_end().ends_with("cached"), "{second}");
    assert_eq!(first.split_whitespace().next(), second.split_whitespace().next());
    assert!(fs::read_to_string(&cache).unwrap().lines().count() >= 2);
}

#[test]
fn detect_is_deterministic_and_rejects_constant_series() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgecpd(&["--seed", "1", "--out", p(dir.path()), "generate", "--mean-shift", "3"]);
    assert_eq!(code(&o), 0);
    let series = dir.path().join("series.csv");
    let run = |det: &str| {
        let o = edgecpd(&["--seed", "9", "detect", "--series", p(&series), "--detector", det, "--params", r#"{"cv":2.2}"#]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    let a = run("npcusum");
    assert_eq!(a, run("npcusum"));
    assert!(a.starts_with("detection_seq,cp_estimate,statistic_value,fallback\n"));
    assert!(a.lines().count() >= 2, "a +3 shift should be detected: {a}");

    let flat = dir.path().join("flat.csv");
    let body: String = std::iter::once("seq,value\n".to_string()).chain((1..=300).map(|i| format!("{i},1.0\n"))).collect();
    fs::write(&flat, body).unwrap();
    let o = edgecpd(&["detect", "--series", p(&flat), "--params", r#"{"cv":2.2}"#]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bocd_timeline_is_written() {
    let dir = tempfile::tempdir().unwrap();
    edgecpd(&["--out", p(dir.path()), "generate", "--mean-shift", "3"]);
    let series = dir.path().join("series.csv");
    let o = edgecpd(&[
        "--out",
        p(dir.path()),
        "detect",
        "--series",
        p(&series),
        "--detector",
        "bocd",
        "--params",
        r#"{"n_runs":10}"#,
        "--timeline",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("bocd_timeline.csv")).unwrap();
    assert!(text.starts_with("run_id,t,detected_location\n"));
}

#[test]
fn client_without_server_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    edgecpd(&["--out", p(dir.path()), "generate", "--length", "300"]);
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let series = dir.path().join("series.csv");
    let o = edgecpd(&["client", "--target", &addr, "--series", p(&series), "--pacing-ms", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn report_on_empty_dir_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&edgecpd(&["report", "--input", p(dir.path())])), 1);
}

#[test]
fn small_experiment_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(
        &cfg,
        r#"
name = "small"
seed = 1
replications = 3
mode = "offline"
changes = [{ t_cp = 150, mean_shift = 3.0 }]

[generator]
length = 300

[[detectors]]
kind = "npcusum"
params = { cv = 2.2 }
"#,
    )
    .unwrap();
    let out = dir.path().join("res");
    let o = edgecpd(&["--config", p(&cfg), "--out", p(&out), "experiment"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("small.json").exists());
    let table = fs::read_to_string(out.join("table1.csv")).unwrap();
    assert!(table.starts_with('#'));

    fs::remove_file(out.join("table1.csv")).unwrap();
    let o = edgecpd(&["--out", p(&out), "report"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("table1.csv").exists());
}
