use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csitrack"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn csitrack")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--preset", "square", "--seed", "5", "--out", "a.csi", "--truth", "a.csv"], d);
    ok(&["simulate", "--preset", "square", "--seed", "5", "--out", "b.csi", "--truth", "b.csv"], d);
    ok(&["simulate", "--preset", "square", "--seed", "6", "--out", "c.csi"], d);
    let a = fs::read(d.join("a.csi")).unwrap();
    assert_eq!(a, fs::read(d.join("b.csi")).unwrap());
    assert_ne!(a, fs::read(d.join("c.csi")).unwrap());
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), fs::read(d.join("b.csv")).unwrap());
}

#[test]
fn preset_header_records_tracker_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["simulate", "--preset", "indoor-4ap", "--seed", "2", "--out", "t.csi"], dir.path());
    assert!(stdout.contains("seed 2"), "{stdout}");
    let text = fs::read_to_string(dir.path().join("t.csi")).unwrap();
    let header: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
    assert!(header.contains(&"# aps 0 1 2 3"), "{header:?}");
    assert!(header.contains(&"# paths 2"), "{header:?}");
    assert!(header.iter().any(|l| l.starts_with("# window 1.0") && l.ends_with("e1")), "{header:?}");
}

#[test]
fn saved_config_reproduces_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--preset", "stationary", "--seed", "4", "--out", "a.csi", "--save-config", "run.toml"], d);
    ok(&["simulate", "--config", "run.toml", "--out", "b.csi"], d);
    assert_eq!(fs::read(d.join("a.csi")).unwrap(), fs::read(d.join("b.csi")).unwrap());
}

#[test]
fn track_and_evaluate_square() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--preset", "square", "--out", "t.csi", "--truth", "truth.csv"], d);
    let summary = ok(&["track", "--trace", "t.csi", "--out", "est.csv"], d);
    assert!(summary.contains("0 unobservable"), "{summary}");
    let report = ok(&["evaluate", "--estimate", "est.csv", "--truth", "truth.csv", "--out", "cdf.csv"], d);
    assert!(report.starts_with("median 0.0000 cm"), "{report}");
    let est = fs::read_to_string(d.join("est.csv")).unwrap();
    assert!(est.starts_with("t,x,y,quality\n"));
    let cdf = fs::read_to_string(d.join("cdf.csv")).unwrap();
    assert!(cdf.starts_with("error_m,fraction\n"));
    assert!(cdf.trim_end().ends_with(",1.0"));
}

#[test]
fn tracking_twice_gives_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--preset", "indoor-4ap", "--seed", "1", "--out", "t.csi"], d);
    ok(&["track", "--trace", "t.csi", "--out", "a.csv"], d);
    ok(&["track", "--trace", "t.csi", "--out", "b.csv"], d);
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), fs::read(d.join("b.csv")).unwrap());
}

#[test]
fn ablate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--preset", "indoor-4ap", "--seed", "8", "--out", "t.csi", "--truth", "truth.csv", "--save-config", "run.toml"], d);
    ok(&["ablate", "--trace", "t.csi", "--truth", "truth.csv", "--mode", "assume-same-clock", "--out", "r.toml"], d);
    let r = fs::read_to_string(d.join("r.toml")).unwrap();
    assert!(r.contains("mode = \"assume-same-clock\""), "{r}");
    let out = ok(
        &["ablate", "--trace", "t.csi", "--truth", "truth.csv", "--mode", "single-packet-aod", "--config", "run.toml", "--cdf", "c.csv"],
        d,
    );
    assert!(out.contains("angle p80"), "{out}");
    let cdf = fs::read_to_string(d.join("c.csv")).unwrap();
    assert!(cdf.contains("multi-packet-aod,") && cdf.contains("single-packet-aod,"));
}

#[test]
fn demo_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["demo", "--preset", "square", "--out", "demo"], dir.path());
    for f in ["config.toml", "trace.csi", "truth.csv", "trajectory.csv", "cdf.csv", "ablation.toml"] {
        assert!(dir.path().join("demo").join(f).is_file(), "missing {f}");
    }
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| run(args, d).status.code().unwrap();

    assert_eq!(code(&["simulate", "--out", "x.csi"]), 3);
    fs::write(d.join("bad.toml"), "[tracker]\nnum_paths = 7\n").unwrap();
    assert_eq!(code(&["simulate", "--config", "bad.toml", "--out", "x.csi"]), 3);

    assert_eq!(code(&["track", "--trace", "missing.csi", "--out", "x.csv"]), 4);
    fs::write(d.join("junk.csi"), "not a trace\n").unwrap();
    assert_eq!(code(&["track", "--trace", "junk.csi", "--out", "x.csv"]), 4);

    ok(&["simulate", "--preset", "square", "--out", "t.csi"], d);
    let text = fs::read_to_string(d.join("t.csi")).unwrap();
    let (header, body): (Vec<&str>, Vec<&str>) = text.lines().partition(|l| l.starts_with('#'));
    let mut body = body;
    body.swap(0, 4);
    fs::write(d.join("swapped.csi"), format!("{}\n{}\n", header.join("\n"), body.join("\n"))).unwrap();
    assert_eq!(code(&["track", "--trace", "swapped.csi", "--out", "x.csv"]), 5);

    fs::write(d.join("one.csv"), "t,x,y\n0,0,0\n").unwrap();
    assert_eq!(code(&["evaluate", "--estimate", "one.csv", "--truth", "one.csv"]), 6);

    assert_eq!(code(&["frobnicate"]), 2);
}
