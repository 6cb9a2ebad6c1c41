//! Golden-output tests for the command line. Set `UPDATE_GOLDEN=1` to
//! rewrite the expected files after an intentional change.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// Shipped network path relative to the crate directory, so that messages
/// stay free of absolute paths.
fn shipped(name: &str) -> String {
    format!("../../networks/{name}")
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("h2ph").chain(args.iter().copied());
    let code = h2ph_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn check_golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden_dir()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "output differs from {name}");
}

#[test]
fn validate_fig1() {
    let (code, out, err) = run(&["validate", &shipped("fig1.net")]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("network fig1: S=3 F=3 C=1 E=1 L=1\n"));
    check_golden("validate_fig1.txt", &out);
}

#[test]
fn simulate_quiet_midpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let args = [
        "simulate",
        &shipped("fig1.net"),
        &shipped("quiet.scn"),
        "--method",
        "midpoint",
        "--out",
        out_dir,
    ];
    let (code, out, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("warning: input channel"), "{err}");
    check_golden("simulate_quiet.txt", &out);

    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1001);
    // a second run reproduces the file byte for byte
    let again = tempfile::tempdir().unwrap();
    let mut args2 = args;
    args2[6] = again.path().to_str().unwrap();
    assert_eq!(run(&args2).0, 0);
    assert_eq!(fs::read(again.path().join("trajectory.csv")).unwrap(), csv.into_bytes());
}

#[test]
fn steady_state_two_storage() {
    let (code, out, err) = run(&[
        "steady-state",
        &shipped("two_storage.net"),
        "--input-file",
        &shipped("two_storage.inp"),
    ]);
    assert_eq!(code, 0, "{err}");
    check_golden("steady_two_storage.txt", &out);
    let line = out.lines().find(|l| l.starts_with("pipe p1:")).unwrap();
    let numbers: Vec<f64> = line.split(['=', ',']).filter_map(|s| s.trim().parse().ok()).collect();
    let (drop, friction) = (numbers[0], numbers[1]);
    assert!((drop - friction).abs() <= 1e-8 * drop.abs(), "{line}");
}

#[test]
fn audit_fig1_day() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(&[
        "audit",
        &shipped("fig1.net"),
        &shipped("fig1_day.scn"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("passed = true"));
    check_golden("audit_fig1_day.txt", &out);
    assert!(dir.path().join("audit.toml").exists());
}

#[test]
fn export_lists_files() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(&["export", &shipped("fig1.net"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    check_golden("export_fig1.txt", &out);
    let (code, out, _) = run(&[
        "export",
        &shipped("fig1.net"),
        "--format",
        "manifest",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(out, "wrote manifest.toml\n");
}

#[test]
fn usage_errors_exit_64() {
    let (code, _, err) = run(&["simulate", "--frobnicate"]);
    assert_eq!(code, 64);
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(run(&["bogus"]).0, 64);
    assert_eq!(run(&["simulate", "a", "b", "--method", "euler"]).0, 64);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("steady-state"));
}

#[test]
fn invalid_network_exits_1_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(shipped("fig1.net"))
        .unwrap()
        .replacen("length = 8000.0", "length = -8000.0", 1);
    let bad = dir.path().join("bad.net");
    fs::write(&bad, text).unwrap();
    let (code, out, err) = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert!(err.contains("bad.net:") && err.contains("edge 'e2'"), "{err}");
}

#[test]
fn missing_file_is_io_error() {
    let (code, _, err) = run(&["validate", "no/such/file.net"]);
    assert_eq!(code, 74);
    assert!(err.contains("no/such/file.net"), "{err}");
}

#[test]
fn numerical_failure_exits_2() {
    // a step larger than the horizon is rejected by the integrator
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&[
        "simulate",
        &shipped("fig1.net"),
        &shipped("quiet.scn"),
        "--step",
        "100",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn binary_honours_output_directory_variable() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_h2ph"))
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .args(["export", &shipped("two_storage.net")])
        .env(h2ph_cli::OUT_DIR_ENV, dir.path())
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(dir.path().join("interconnection.csv").exists());

    let status = Command::new(env!("CARGO_BIN_EXE_h2ph")).arg("--nope").output().unwrap();
    assert_eq!(status.status.code(), Some(64));
}
