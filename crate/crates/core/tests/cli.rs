use std::process::Command;

use htdp::harness::CSV_HEADER;

fn htdp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_htdp"))
}

const SMALL_RUN: &str = "run --problem quadratic --algo localized --oracle central-l2 --n 128,256 --d 2 --eps 1";

fn words(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

#[test]
fn run_prints_csv_to_stdout() {
    let out = htdp().args(words(SMALL_RUN)).args(["--trials", "2"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[1].starts_with("quadratic,localized,central-l2,128,2,1,,2,0,"));
    assert!(lines[4].starts_with("quadratic,localized,central-l2,256,2,1,,2,1,"));
}

#[test]
fn reruns_write_identical_files_and_a_plot() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for i in 0..2 {
        let csv = dir.path().join(format!("out{i}.csv"));
        let svg = dir.path().join(format!("out{i}.svg"));
        let status = htdp()
            .args(words(SMALL_RUN))
            .args(["--seed", "5", "--trials", "3", "--out"])
            .arg(&csv)
            .arg("--plot")
            .arg(&svg)
            .status()
            .unwrap();
        assert!(status.success());
        assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));
        files.push(std::fs::read(&csv).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.json");
    std::fs::write(
        &config,
        r#"{"problem": "linear", "algo": "acsa", "oracle": "shuffle-l2", "n": [256], "d": [3], "eps": [2.0],
            "delta": 1e-6, "trials": 1, "seed": 3}"#,
    )
    .unwrap();
    let out = htdp()
        .arg("run")
        .arg("--config")
        .arg(&config)
        .args(["--trials", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text
        .lines()
        .nth(2)
        .unwrap()
        .starts_with("linear,acsa,shuffle-l2,256,3,2,0.000001,2,1,"));
}

#[test]
fn configuration_errors_exit_with_status_2() {
    let cases = [
        "run --problem quadratic --algo adam --oracle central-l2 --n 64 --d 2 --eps 1",
        "run --problem cubic --algo acsa --oracle central-l2 --n 64 --d 2 --eps 1",
        "run --problem quadratic --algo acsa --oracle shuffle-l2 --n 64 --d 2 --eps 1",
        "run --problem quadratic --algo acsa --oracle central-l2 --n 64 --d 2 --eps -1",
        "run --algo acsa --oracle central-l2 --n 64 --d 2 --eps 1",
    ];
    for args in cases {
        let out = htdp().args(words(args)).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
        assert!(out.stdout.is_empty());
    }
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"problem": "quadratic", "colour": 1}"#).unwrap();
    assert_eq!(
        htdp()
            .arg("run")
            .arg("--config")
            .arg(&config)
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        htdp()
            .args(["run", "--config", "/nonexistent/sweep.json"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn unwritable_output_exits_with_status_3() {
    let out = htdp()
        .args(words(SMALL_RUN))
        .args(["--out", "/nonexistent/dir/out.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}
