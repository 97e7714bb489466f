//! The hkam binary: determinism, exit codes and stage isolation on disk.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn hkam(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hkam")).args(args).output().expect("run hkam")
}

fn config(name: &str) -> String {
    format!("{}/configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hkam-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn demo_run_is_byte_identical_and_passes() {
    let (a, b) = (scratch("a"), scratch("b"));
    let first = hkam(&["analyze", "--config", &config("demo.conf"), "--out", a.to_str().unwrap(), "--seed", "7"]);
    let second = hkam(&["analyze", "--config", &config("demo.conf"), "--out", b.to_str().unwrap(), "--seed", "7", "--threads", "2"]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    assert_eq!(second.status.code(), Some(0));
    let (fa, fb) = (read_all(&a), read_all(&b));
    assert_eq!(fa, fb);
    let inter = fs::read_to_string(a.join("intersections.csv")).unwrap();
    let rows: Vec<&str> = inter.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("4")));
    assert!(!inter.contains('\r'));
    let orbit = fs::read_to_string(a.join("orbit.csv")).unwrap();
    assert!(orbit.starts_with("n,x,y,u,v\n"));

    let report = hkam(&["report", "--out", a.to_str().unwrap()]);
    assert_eq!(report.status.code(), Some(0));
    assert_eq!(report.stdout, fs::read(a.join("summary.txt")).unwrap());
    fs::remove_dir_all(&a).unwrap();
    fs::remove_dir_all(&b).unwrap();
}

#[test]
fn strong_resonance_exits_with_certificate_failure_and_keeps_outputs() {
    let dir = scratch("res");
    let out = hkam(&["analyze", "--config", &config("strong_resonance.conf"), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fixed-point"));
    let summary = fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert!(summary.contains("build ok") && summary.contains("fixed-point failed"));
    assert_eq!(fs::read_to_string(dir.join("kam.csv")).unwrap(), "I,rotation_number,verdict,residual\n");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn identity_gluing_reports_degenerate_rotation() {
    let dir = scratch("id");
    let out = hkam(&["genericity", "--config", &config("identity_b.conf"), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let s = fs::read_to_string(dir.join("scattering.txt")).unwrap();
    assert!(s.contains("class degenerate-rotation"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn malformed_config_is_an_error() {
    let dir = scratch("bad");
    fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.conf");
    fs::write(&path, "model.nu = 0.1\nmodel.mu = 0.5x\n").unwrap();
    let out = hkam(&["analyze", "--config", path.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let unknown = hkam(&["analyze", "--stage", "nonsense", "--out", dir.to_str().unwrap()]);
    assert_eq!(unknown.status.code(), Some(1));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn stage_flag_limits_the_run() {
    let dir = scratch("stage");
    let out = hkam(&["analyze", "--stage", "scattering", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.join("scattering.txt").exists());
    assert!(!dir.join("intersections.csv").exists());
    fs::remove_dir_all(&dir).unwrap();
}
