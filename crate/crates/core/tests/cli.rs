use std::fs;
use std::process::{Command, Output};

use psqkd::cli::{format_sig, RATE_COLUMNS};

fn psqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psqkd"))
        .args(args)
        .env_remove("PSQKD_JOBS")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Rows of a CSV as maps from column name to cell.
fn rows(csv: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| {
            header
                .iter()
                .map(|h| h.to_string())
                .zip(l.split(',').map(String::from))
                .collect()
        })
        .collect()
}

fn num(row: &std::collections::HashMap<String, String>, col: &str) -> f64 {
    row[col].parse().unwrap()
}

#[test]
fn point_on_perfect_channel() {
    let csv = stdout(&psqkd(&[
        "point", "--t", "1", "--xi", "0", "--va", "4", "--beta", "1", "--la", "0", "--lb", "0",
    ]));
    assert_eq!(csv.lines().next().unwrap(), RATE_COLUMNS.join(","));
    let r = &rows(&csv)[0];
    assert_eq!(num(r, "chi_ea"), 0.0);
    assert_eq!(r["keyrate_raw"], r["I_ab"]);
    assert_eq!(r["status"], "ok");
    assert!(!csv.contains('\r'));
}

#[test]
fn sweep_rows_round_trip_through_point() {
    let csv = stdout(&psqkd(&[
        "sweep",
        "--xi",
        "0,0.05",
        "--t-min",
        "0.2",
        "--t-max",
        "0.95",
        "--t-steps",
        "4",
        "--lb",
        "0.3",
    ]));
    let table = rows(&csv);
    assert_eq!(table.len(), 8);
    for r in table.iter().filter(|r| r["status"] == "ok") {
        let mut args = vec!["point".to_string()];
        for (flag, col) in [
            ("t", "T"),
            ("xi", "xi"),
            ("va", "V_A"),
            ("beta", "beta"),
            ("la", "L_A"),
            ("ua", "U_A"),
            ("lb", "L_B"),
            ("ub", "U_B"),
        ] {
            args.push(format!("--{flag}"));
            args.push(r[col].clone());
        }
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let again = &rows(&stdout(&psqkd(&args)))[0];
        assert!((num(again, "keyrate_raw") - num(r, "keyrate_raw")).abs() < 1e-9);
    }
}

#[test]
fn twelve_significant_digits() {
    let csv = stdout(&psqkd(&["point", "--t", "0.7", "--xi", "0.01", "--lb", "0.5"]));
    let r = &rows(&csv)[0];
    let p = num(r, "P_ps");
    assert_eq!(r["P_ps"], format_sig(p, 12));
    let digits = r["P_ps"].trim_start_matches("0.").trim_start_matches('0').len();
    assert!(digits <= 12);
}

#[test]
fn optimized_sweep_reports_failed_rows_without_aborting() {
    let csv = stdout(&psqkd(&[
        "sweep",
        "--xi",
        "0,0.05",
        "--t-min",
        "0.9",
        "--t-max",
        "1",
        "--t-steps",
        "2",
        "--optimize",
        "--grid",
        "3",
        "--refine-seeds",
        "2",
        "--max-evals",
        "200",
    ]));
    let table = rows(&csv);
    assert_eq!(table.len(), 4);
    assert_eq!(table[1]["status"], "ok");
    assert!(table[3]["status"].starts_with("error"));
    assert_eq!(table[3]["keyrate_raw"], "");
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"t": 0.5, "xi": 0.01, "va": 3, "lb": 0.8, "format": "json"}"#).unwrap();
    let out_path = dir.path().join("out.json");
    let out = psqkd(&[
        "point",
        "--config",
        cfg.to_str().unwrap(),
        "--va",
        "5",
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let row = &v[0];
    assert_eq!(row["V_A"], 5.0);
    assert_eq!(row["T"], 0.5);
    assert_eq!(row["L_B"], 0.8);
    assert_eq!(row["U_A"], "inf");
    assert_eq!(row["status"], "ok");
}

#[test]
fn json_mirrors_csv() {
    let csv = stdout(&psqkd(&["point", "--t", "0.6", "--xi", "0.02", "--la", "0.4"]));
    let json = stdout(&psqkd(&[
        "point", "--t", "0.6", "--xi", "0.02", "--la", "0.4", "--format", "json",
    ]));
    let r = &rows(&csv)[0];
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    for col in ["T", "P_ps", "p_e", "chi_ea", "keyrate_raw"] {
        assert_eq!(v[0][col].as_f64().unwrap(), num(r, col), "{col}");
    }
}

#[test]
fn exit_codes() {
    let bad = psqkd(&["point", "--t", "1.5"]);
    assert_eq!(bad.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&bad.stderr).unwrap();
    assert_eq!(err["error"], "config");

    assert_eq!(psqkd(&["point", "--t", "0.5", "--bogus"]).status.code(), Some(2));
    assert_eq!(psqkd(&["point"]).status.code(), Some(2));
    assert_eq!(
        psqkd(&["point", "--t", "0.5", "--config", "/nonexistent/cfg.json"])
            .status
            .code(),
        Some(4)
    );

    // Lower thresholds far out in both tails leave nothing to keep.
    let underflow = psqkd(&["point", "--t", "0.5", "--la", "200", "--lb", "200"]);
    assert_eq!(underflow.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&underflow.stderr).unwrap();
    assert_eq!(err["error"], "computation");

    let dir = tempfile::tempdir().unwrap();
    let unwritable = dir.path().join("missing").join("out.csv");
    let io = psqkd(&["point", "--t", "0.5", "--output", unwritable.to_str().unwrap()]);
    assert_eq!(io.status.code(), Some(4));
}

#[test]
fn verify_prints_z_table() {
    let csv = stdout(&psqkd(&[
        "verify",
        "--t",
        "0.5",
        "--xi",
        "0.01",
        "--la",
        "1",
        "--lb",
        "0.8",
        "--samples",
        "200000",
        "--seed",
        "42",
    ]));
    let table = rows(&csv);
    let names: Vec<&str> = table.iter().map(|r| r["statistic"].as_str()).collect();
    assert_eq!(names, ["P_ps", "V_a", "V_b", "C", "p_e", "overall"]);
    assert_eq!(table[5]["status"], "pass");
}

#[test]
fn jobs_from_environment_do_not_change_output() {
    let args = [
        "sweep",
        "--xi",
        "0.01",
        "--t-min",
        "0.3",
        "--t-max",
        "0.9",
        "--t-steps",
        "5",
        "--la",
        "0.5",
    ];
    let a = stdout(&psqkd(&args));
    let b = Command::new(env!("CARGO_BIN_EXE_psqkd"))
        .args(args)
        .env("PSQKD_JOBS", "3")
        .output()
        .unwrap();
    assert_eq!(a.as_bytes(), b.stdout.as_slice());
    assert_eq!(psqkd(&["point", "--t", "0.5", "--jobs", "0"]).status.code(), Some(2));
}

#[test]
fn help_documents_units() {
    let help = stdout(&psqkd(&["sweep", "--help"]));
    assert!(help.contains("shot-noise units"));
    assert!(help.contains("raw heterodyne record"));
}
