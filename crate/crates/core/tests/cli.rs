//! End-to-end checks of the batch front-end: documented examples, exit-code
//! contract, and byte-identical replay under a fixed seed.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sle-lab"))
}

#[test]
fn kac_table_example_rows() {
    let out = bin()
        .args(["kac-table", "--kappa", "6", "--rmax", "3", "--smax", "3", "--format", "json"])
        .output()
        .expect("spawn");
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // 9 table rows followed by the verdict line
    assert_eq!(lines.len(), 10);
    let row: serde_json::Value = serde_json::from_str(lines[2]).unwrap();
    assert_eq!(row["r"], 1);
    assert_eq!(row["s"], 3);
    assert_eq!(row["h"], "1/3");
    let verdict: serde_json::Value = serde_json::from_str(lines[9]).unwrap();
    assert_eq!(verdict["pass"], true);
    assert_eq!(verdict["rows"], 9);
}

#[test]
fn verify_fusion_example_passes() {
    let out = bin()
        .args(["verify-fusion", "--samples", "50", "--seed", "7"])
        .output()
        .expect("spawn");
    assert!(out.status.success());
    let verdict: serde_json::Value =
        serde_json::from_str(String::from_utf8(out.stdout).unwrap().trim()).unwrap();
    assert_eq!(verdict["pass"], true);
    assert_eq!(verdict["samples"], 50);
}

#[test]
fn trace_example_endpoint_and_replay() {
    let dir = std::env::temp_dir();
    let a = dir.join("sle_lab_cli_trace_a.csv");
    let b = dir.join("sle_lab_cli_trace_b.csv");
    for p in [&a, &b] {
        let out = bin()
            .args(["trace", "--kappa", "0", "--T", "1", "--N", "1000", "--seed", "1"])
            .arg("--out")
            .arg(p)
            .output()
            .expect("spawn");
        assert!(out.status.success());
    }
    let ta = std::fs::read(&a).unwrap();
    let tb = std::fs::read(&b).unwrap();
    assert_eq!(ta, tb, "replay must be byte-identical");
    let text = String::from_utf8(ta).unwrap();
    let last = text.lines().last().unwrap();
    let cols: Vec<f64> = last.split(',').map(|v| v.parse().unwrap()).collect();
    // kappa = 0 grows the vertical slit: endpoint 2i sqrt(t)
    assert!((cols[0] - 1.0).abs() <= 1e-3);
    assert!(cols[1].abs() <= 1e-3);
    assert!((cols[2] - 2.0).abs() <= 1e-3);
    let _ = std::fs::remove_file(a);
    let _ = std::fs::remove_file(b);
}

#[test]
fn unknown_flag_is_usage_error_naming_token() {
    let out = bin()
        .args(["trace", "--kappa", "0", "--T", "1", "--N", "10", "--seed", "1", "--bogus"])
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("--bogus"), "stderr must name the offending token: {err}");
}

#[test]
fn missing_seed_is_usage_error() {
    let out = bin()
        .args(["trace", "--kappa", "0", "--T", "1", "--N", "10"])
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn domain_error_is_usage_error() {
    let out = bin()
        .args(["kac-table", "--kappa", "-3", "--rmax", "1", "--smax", "1"])
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn quantitative_miss_exits_two() {
    // far-separated tips give a tiny but nonzero stderr; demanding 1e-12
    // is an honest quantitative failure, not a usage error
    let out = bin()
        .args([
            "martingale-check",
            "--kappa",
            "2.6666666666666665",
            "--x0",
            "-100,100",
            "--t-end",
            "0.05",
            "--paths",
            "8",
            "--seed",
            "3",
            "--stderr-max",
            "1e-12",
        ])
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(2));
    let verdict: serde_json::Value =
        serde_json::from_str(String::from_utf8(out.stdout).unwrap().trim()).unwrap();
    assert_eq!(verdict["pass"], false);
}

#[test]
fn collapse_exact_identity() {
    let out = bin()
        .args(["collapse", "--kappa", "8/3", "--m", "3", "--tol", "1e-9"])
        .output()
        .expect("spawn");
    assert!(out.status.success());
    let verdict: serde_json::Value =
        serde_json::from_str(String::from_utf8(out.stdout).unwrap().trim()).unwrap();
    assert_eq!(verdict["pass"], true);
    let slope = verdict["slope"].as_f64().unwrap();
    assert!((slope - 2.25).abs() <= 1e-9, "m(m-1)/kappa at 8/3, m=3 is 9/4");
}
