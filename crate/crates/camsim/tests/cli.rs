//! End-to-end checks of the command-line surface: subcommands, config
//! loading, file outputs, exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn camsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_camsim"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("camsim_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// A small 4x4 configuration so CLI runs stay fast.
fn write_small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{ "array": { "rows": 4, "cols": 4 }, "seed": 1 }"#,
    )
    .unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary must run")
}

#[test]
fn truth_table_writes_report_and_succeeds() {
    let dir = tmp_dir("truth");
    let out = run(camsim().args(["--out"]).arg(&dir).arg("truth-table"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.join("truth_table_report.json")).unwrap();
    assert!(report.contains("camsim-report/1"));
    assert!(report.contains("\"matches_expected\": true"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn search_hit_and_miss_with_patterns() {
    let dir = tmp_dir("search");
    let cfg = write_small_config(&dir);
    let out = run(camsim()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .args(["search", "--data", "HHHH", "--cue", "1111"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Hit"));

    let out = run(camsim()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .args(["search", "--data", "HHHH", "--cue", "0111"]));
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("Miss"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn malformed_pattern_rejected_with_position() {
    let dir = tmp_dir("badpat");
    let cfg = write_small_config(&dir);
    let out = run(camsim()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .args(["search", "--data", "HHQa", "--cue", "1111"]));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("position 2"), "stderr: {err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn wrong_length_pattern_rejected() {
    let dir = tmp_dir("badlen");
    let cfg = write_small_config(&dir);
    let out = run(camsim()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .args(["search", "--data", "HH", "--cue", "11"]));
    assert_eq!(out.status.code(), Some(1));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn fit_device_recovers_synthetic_curvature() {
    use camsim::device::{synthetic_sweep, RramParams, ResistiveState};
    let dir = tmp_dir("fit");
    let params = RramParams::calibrated(ResistiveState::custom(218e3));
    let sweep = synthetic_sweep(&params, 1.0, 24);
    let mut csv = String::from("volts,amperes\n");
    for (v, i) in &sweep.points {
        csv.push_str(&format!("{v:.9e},{i:.9e}\n"));
    }
    let csv_path = dir.join("synthetic.csv");
    std::fs::write(&csv_path, csv).unwrap();

    let out = run(camsim()
        .arg("--out")
        .arg(&dir)
        .arg("fit-device")
        .arg(&csv_path)
        .args(["--rs", "218000"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let card: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("model_card.json")).unwrap())
            .unwrap();
    let b_p = card["payload"]["b_p"].as_f64().unwrap();
    assert!(
        (b_p - 5.0).abs() / 5.0 < 0.01,
        "recovered b_p = {b_p}, expected within 1% of 5.0"
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn table2_suite_emits_expected_matrix() {
    let dir = tmp_dir("table2");
    let cfg = write_small_config(&dir);
    let out = run(camsim()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .args(["--format", "csv", "suite", "table2"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("table2_report.json")).unwrap())
            .unwrap();
    let decisions = &report["payload"]["decisions"];
    for c in 0..4 {
        for d in 0..4 {
            let expect = if c == d { "hit" } else { "miss" };
            assert_eq!(decisions[c][d], expect, "cue{c}/data{d}");
        }
    }
    assert!(dir.join("table2_matrix.csv").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn reports_are_byte_identical_across_reruns() {
    let dir_a = tmp_dir("det_a");
    let dir_b = tmp_dir("det_b");
    let cfg = write_small_config(&dir_a);
    for dir in [&dir_a, &dir_b] {
        let out = run(camsim()
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(dir)
            .args(["suite", "table2"]));
        assert!(out.status.success());
    }
    let a = std::fs::read(dir_a.join("table2_report.json")).unwrap();
    let b = std::fs::read(dir_b.join("table2_report.json")).unwrap();
    assert_eq!(a, b, "reruns must produce byte-identical reports");
    let _ = std::fs::remove_dir_all(&dir_a);
    let _ = std::fs::remove_dir_all(&dir_b);
}

#[test]
fn write_sweep_emits_csv_and_svg() {
    let dir = tmp_dir("esr");
    let cfg = write_small_config(&dir);
    let out = run(camsim()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .args(["--format", "csv,svg", "write-sweep", "--direction", "fwd"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("write_sweep_fwd.json").exists());
    assert!(dir.join("write_sweep_fwd.csv").exists());
    let svg = std::fs::read_to_string(dir.join("write_sweep_fwd.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn camsim_out_env_sets_default_directory() {
    let dir = tmp_dir("envout");
    let out = run(camsim().env("CAMSIM_OUT", &dir).arg("truth-table"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("truth_table_report.json").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tmp_dir("badcfg");
    let path = dir.join("config.json");
    std::fs::write(&path, r#"{ "bogus_key": 1 }"#).unwrap();
    let out = run(camsim()
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(&dir)
        .arg("truth-table"));
    assert_eq!(out.status.code(), Some(1));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn aar_subcommand_runs_small_suite() {
    let dir = tmp_dir("aar");
    let cfg = write_small_config(&dir);
    let out = run(camsim()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .arg("aar"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("8/8 correct"), "stdout: {text}");
    let _ = std::fs::remove_dir_all(&dir);
}
