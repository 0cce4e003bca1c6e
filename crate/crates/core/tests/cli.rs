use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_honeysplice"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.toml"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e1");
    let o = bin()
        .arg("run")
        .arg(scenario("e1_redirect"))
        .args(["--reps", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("migration at packet 100"), "{}", stdout(&o));
    assert!(stdout(&o).contains("ratio 1.0000"));

    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3 * 120);
    let first_summary = fs::read(out.join("summary.csv")).unwrap();

    let o = bin().arg("summarize").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("3 repetitions, 120 packet indices"));
    assert_eq!(fs::read(out.join("summary.csv")).unwrap(), first_summary);
    let marked: Vec<_> = String::from_utf8(first_summary)
        .unwrap()
        .lines()
        .filter(|l| l.ends_with(",migration"))
        .map(str::to_string)
        .collect();
    assert_eq!(marked.len(), 1);
    assert!(marked[0].starts_with("100,3,"));
}

#[test]
fn check_reports_no_violations() {
    let o = bin()
        .arg("check")
        .arg(scenario("e4_restore"))
        .args(["--reps", "2", "--seed", "99"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("2 repetitions"));
    assert!(stdout(&o).ends_with("0 violations\n"), "{}", stdout(&o));
}

#[test]
fn bad_config_exits_two_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(
        &path,
        "name = \"bad\"\nseed = 1\ntotal_packets = 10\ntrigger = { kind = \"nth_packet\", n = 5 }\n[topology]\ncontrol_delay_us = \"soon\"\n",
    )
    .unwrap();
    let o = bin().arg("check").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("topology.control_delay_us"), "{err}");

    let o = bin().arg("run").arg(dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin()
        .arg("check")
        .arg(scenario("e1_redirect"))
        .args(["--reps", "0"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn summarize_missing_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().arg("summarize").arg(dir.path().join("nope")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
