use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const QUICK: &str = "\
[mission]
mode = integrated
seed = 7
[flight]
circles = 1
speed = 0.3
[scene]
surface_samples = 5000
[capture]
point_budget = 120
[eval]
ring_count = 4
resolution = 64
reference_samples = 4000
wd_samples = 64
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scanplan"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("scanplan_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn simulate(dir: &Path, config: &str) -> Output {
    let cfg = dir.join("mission.ini");
    std::fs::write(&cfg, config).unwrap();
    run(bin().arg("simulate").arg(&cfg).arg("-o").arg(dir.join("run")))
}

#[test]
fn simulate_then_evaluate() {
    let dir = scratch("sim");
    assert!(simulate(&dir, QUICK).status.success());
    let run_dir = dir.join("run");
    for f in ["config.ini", "config.effective.ini", "final.ply", "flight_log.csv", "coverage.csv", "decisions.csv"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    assert_eq!(std::fs::read_to_string(run_dir.join("config.ini")).unwrap(), QUICK);

    let out = run(bin().arg("evaluate").arg(&run_dir));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("integrated,"));
    assert!(run_dir.join("summary.csv").exists());
    assert!(run_dir.join("views/reference_00.pgm").exists());

    let out = run(bin().arg("report").arg(&run_dir));
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("integrated"));
}

#[test]
fn oracle_evaluation_is_ideal() {
    let dir = scratch("oracle");
    assert!(simulate(&dir, QUICK).status.success());
    let out = run(bin().arg("evaluate").arg("--oracle").arg(dir.join("run")));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], "99.0000");
    assert_eq!(row[2], "1.0000");
    assert_eq!(row[5], "0.000000");
    assert_eq!(row[6], "0.000000");
}

#[test]
fn unknown_mode_exits_with_config_code() {
    let dir = scratch("badmode");
    let out = simulate(&dir, "[mission]\nmode = sideways\n");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn env_override_reaches_the_mission() {
    let dir = scratch("env");
    let cfg = dir.join("mission.ini");
    std::fs::write(&cfg, QUICK).unwrap();
    let out = run(
        bin()
            .env("SCANPLAN_MISSION_MODE", "not_a_mode")
            .arg("simulate")
            .arg(&cfg)
            .arg("-o")
            .arg(dir.join("run")),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_run_exits_with_runtime_code() {
    let dir = scratch("missing");
    let out = run(bin().arg("evaluate").arg(&dir));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn matrix_writes_one_row_per_run() {
    let dir = scratch("matrix");
    let spec = dir.join("spec.ini");
    std::fs::write(&spec, format!("{QUICK}[matrix]\nmodes = baseline, location_aware\nseeds = 1-2\n")).unwrap();
    let out = run(bin().arg("matrix").arg(&spec).arg("-o").arg(dir.join("m")).arg("--jobs").arg("2"));
    assert!(out.status.success());
    let summary = std::fs::read_to_string(dir.join("m/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
    let stats = std::fs::read_to_string(dir.join("m/cell_stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 1 + 2);
    let out = run(bin().arg("report").arg(dir.join("m")));
    assert!(String::from_utf8(out.stdout).unwrap().contains("location_aware/1uav/engraved_box/bw"));
}

#[test]
fn empty_matrix_spec_is_bad_config() {
    let dir = scratch("empty");
    let spec = dir.join("spec.ini");
    std::fs::write(&spec, "").unwrap();
    let out = run(bin().arg("matrix").arg(&spec).arg("-o").arg(dir.join("m")));
    assert_eq!(out.status.code(), Some(2));
}
