//! Exercises the m3sel binary end to end: command wiring, output files,
//! provenance echo and the documented exit codes.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_m3sel"))
}

struct WorkDir(PathBuf);

impl WorkDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("m3sel-cli-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

impl Drop for WorkDir {
    fn drop(&mut self) {
        fs::remove_dir_all(&self.0).ok();
    }
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    bin().args(args).output().unwrap().status.code().unwrap()
}

/// Writes a config enriching the stream with signal so tuning has samples.
fn signal_config(dir: &WorkDir) -> String {
    let path = dir.path("config.toml");
    fs::write(&path, "[gen]\nsignal_fraction = 0.5\n").unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gen_is_deterministic_per_seed() {
    let dir = WorkDir::new("gen");
    for out in ["a.m3c", "b.m3c"] {
        run_ok(&[
            "gen",
            "--frames",
            "50",
            "--seed",
            "9",
            "--out",
            &dir.p(out),
            "--truth",
            &dir.p(&format!("{out}.truth")),
        ]);
    }
    assert_eq!(
        fs::read(dir.path("a.m3c")).unwrap(),
        fs::read(dir.path("b.m3c")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path("a.m3c.truth")).unwrap(),
        fs::read(dir.path("b.m3c.truth")).unwrap()
    );
    assert!(!fs::read(dir.path("a.m3c")).unwrap().is_empty());
}

#[test]
fn zero_frames_make_a_valid_empty_stream() {
    let dir = WorkDir::new("empty");
    run_ok(&["gen", "--frames", "0", "--out", &dir.p("none.m3c")]);
    let out = run_ok(&["run", "--in", &dir.p("none.m3c")]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        text.contains("frames            0"),
        "unexpected report:\n{text}"
    );
}

#[test]
fn tune_then_run_round_trips_through_files() {
    let dir = WorkDir::new("tune");
    let cfg = signal_config(&dir);
    run_ok(&[
        "gen",
        "--config",
        &cfg,
        "--frames",
        "800",
        "--seed",
        "3",
        "--out",
        &dir.p("sig.m3c"),
        "--truth",
        &dir.p("sig.truth"),
    ]);
    let out = run_ok(&[
        "tune",
        "--config",
        &cfg,
        "--in",
        &dir.p("sig.m3c"),
        "--truth",
        &dir.p("sig.truth"),
        "--retention",
        "0.98",
        "--out",
        &dir.p("tuned.toml"),
    ]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        text.contains("achieved retention"),
        "missing retention line:\n{text}"
    );

    let out = run_ok(&[
        "run",
        "--config",
        &dir.p("tuned.toml"),
        "--in",
        &dir.p("sig.m3c"),
        "--truth",
        &dir.p("sig.truth"),
        "--out",
        &dir.p("kept.m3c"),
        "--report",
        &dir.p("report.json"),
    ]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        text.contains("vertex found"),
        "missing keep histogram:\n{text}"
    );

    // The report echoes the config it ran with.
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path("report.json")).unwrap()).unwrap();
    assert_eq!(
        report["config"]["gen"]["signal_fraction"],
        serde_json::json!(0.5)
    );
    assert!(report["report"]["frames_kept"].as_u64().unwrap() > 0);

    // Kept frames all pass again when re-run with the same thresholds.
    let out = run_ok(&[
        "run",
        "--config",
        &dir.p("tuned.toml"),
        "--in",
        &dir.p("kept.m3c"),
    ]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let kept = report["report"]["frames_kept"].as_u64().unwrap();
    assert!(
        text.contains(&format!("frames            {kept}")),
        "rerun mismatch:\n{text}"
    );
}

#[test]
fn inspect_prints_layer_counts_and_verdict() {
    let dir = WorkDir::new("inspect");
    run_ok(&[
        "gen",
        "--frames",
        "20",
        "--seed",
        "4",
        "--out",
        &dir.p("mix.m3c"),
    ]);
    let out = run_ok(&["inspect", "--in", &dir.p("mix.m3c"), "--frame", "7"]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("frame 7"));
    assert!(text.contains("layer 0:"));
    assert!(text.contains("verdict:"));
}

#[test]
fn bench_prints_one_row_per_worker_count() {
    let dir = WorkDir::new("bench");
    run_ok(&[
        "gen",
        "--frames",
        "60",
        "--seed",
        "6",
        "--out",
        &dir.p("mix.m3c"),
    ]);
    let out = run_ok(&[
        "bench",
        "--in",
        &dir.p("mix.m3c"),
        "--workers",
        "1,2",
        "--repeat",
        "2",
    ]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| l.trim_start().starts_with(['1', '2']))
        .collect();
    assert_eq!(rows.len(), 2, "bench table:\n{text}");
}

#[test]
fn exit_codes_separate_usage_data_and_tuning_failures() {
    let dir = WorkDir::new("codes");
    let missing = dir.p("missing.m3c");

    // Usage errors: unknown flag, bad retention, unknown frame id.
    assert_eq!(exit_code(&["run", "--definitely-not-a-flag"]), 1);
    run_ok(&[
        "gen",
        "--frames",
        "10",
        "--seed",
        "2",
        "--out",
        &dir.p("mix.m3c"),
        "--truth",
        &dir.p("mix.truth"),
    ]);
    assert_eq!(
        exit_code(&[
            "tune",
            "--in",
            &dir.p("mix.m3c"),
            "--truth",
            &dir.p("mix.truth"),
            "--retention",
            "1.5"
        ]),
        1
    );
    assert_eq!(
        exit_code(&["inspect", "--in", &dir.p("mix.m3c"), "--frame", "100000"]),
        1
    );

    // Data errors: missing and corrupt inputs.
    assert_eq!(exit_code(&["run", "--in", &missing]), 2);
    let corrupt = dir.path("corrupt.m3c");
    fs::copy(dir.path("mix.m3c"), &corrupt).unwrap();
    fs::copy(dir.path("mix.m3c.meta"), dir.path("corrupt.m3c.meta")).unwrap();
    let mut bytes = fs::read(&corrupt).unwrap();
    let n = bytes.len();
    bytes[n - 4..].copy_from_slice(&u32::MAX.to_le_bytes());
    fs::write(&corrupt, bytes).unwrap();
    assert_eq!(exit_code(&["run", "--in", &corrupt.to_string_lossy()]), 2);

    // Tuning target unreachable: a background-only stream has no truth samples.
    assert_eq!(
        exit_code(&[
            "tune",
            "--in",
            &dir.p("mix.m3c"),
            "--truth",
            &dir.p("mix.truth"),
            "--retention",
            "0.985"
        ]),
        3
    );

    // Help is not an error.
    assert_eq!(exit_code(&["--help"]), 0);
}
