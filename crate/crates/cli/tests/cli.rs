use std::process::Command;

use lod_cli::commands::CSV_HEADER;
use lod_cli::dump::{FieldDump, FieldKind};
use lod_core::load_coefficient;

fn lod(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lod"))
        .args(args)
        .env_clear()
        .output()
        .expect("binary runs")
}

#[test]
fn gen_coefficient_writes_file_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a1.bin");
    let out = lod(&["--seed", "7", "gen-coefficient", "--family", "a1", "--level", "4", "--path", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("level=4 seed=7 alpha=1 beta=4"), "{text}");
    let a = load_coefficient(&path).unwrap();
    assert_eq!(a.cells().len(), 256);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bin");
    assert_eq!(lod(&["gen-coefficient", "--family", "a3", "--path", path.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(lod(&["--set", "nonsense=1", "solve"]).status.code(), Some(2));
    assert_eq!(lod(&["--set", "fine_level=3", "solve"]).status.code(), Some(2));
    assert_eq!(lod(&["--set", "p=x", "solve"]).status.code(), Some(2));
}

#[test]
fn solve_prints_row_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("u.field");
    let out = lod(&[
        "--set", "coarse_levels=2", "--set", "fine_level=5", "--set", "coefficient_level=3", "--set", "decay_level=2",
        "--set", "p=1", "--set", "ell=2", "solve", "--dump", dump.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "splod");
    let err: f64 = row[5].parse().unwrap();
    assert!(err.is_finite() && err < 0.2);
    let d = FieldDump::read(&dump).unwrap();
    assert_eq!((d.kind, d.rows, d.cols), (FieldKind::Solution, 33, 33));
}

#[test]
fn env_vars_set_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lod"))
        .args(["--out", dir.path().to_str().unwrap(), "--set", "coarse_levels=2", "--set", "fine_level=5"])
        .args(["--set", "coefficient_level=3", "--set", "decay_level=2", "solve"])
        .env_clear()
        .env("LOD_METHOD", "plod")
        .env("LOD_P", "0")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("plod,0,"), "{text}");
}
