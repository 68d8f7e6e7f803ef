use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use odmr_core::format::parse_spectrum_csv;

fn odmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odmr"))
        .args(args)
        .env_remove("ODMR_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok_stdout(args: &[&str]) -> String {
    let out = odmr(args);
    assert!(
        out.status.success(),
        "odmr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok_stdout(args)).expect("valid JSON")
}

fn num(v: &Value, key: &str) -> f64 {
    v[key]
        .as_f64()
        .unwrap_or_else(|| panic!("no number `{key}` in {v}"))
}

/// Parses a sweep CSV into its data rows.
fn sweep_rows(text: &str) -> Vec<Vec<f64>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# sweep-csv v1"));
    lines
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn sweep_meta<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix("# ")?.strip_prefix(key)?.strip_prefix('='))
        .unwrap_or_else(|| panic!("no `{key}` metadata"))
}

#[test]
fn simulate_then_fit_finds_both_lines() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("spec.csv");
    let svg = dir.path().join("spec.svg");
    let csv_s = csv.to_str().unwrap();
    ok_stdout(&[
        "simulate",
        "--b0-gauss",
        "60",
        "--theta-deg",
        "0",
        "--laser-mw",
        "60",
        "--mw-dbm",
        "18",
        "--fmin-mhz",
        "50",
        "--fmax-mhz",
        "280",
        "--points",
        "461",
        "--dwell-ms",
        "10",
        "--seed",
        "7",
        "-o",
        csv_s,
        "--svg",
        svg.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("# odmr-csv v1\n"));
    let (spec, _) = parse_spectrum_csv(&text).unwrap();
    assert_eq!(spec.len(), 461);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let fit = json(&["fit", "odmr", csv_s]);
    assert_eq!(fit["converged"], Value::Bool(true));
    assert!(
        (num(&fit, "center_1_hz") / 1e6 - 98.148).abs() < 0.5,
        "{fit}"
    );
    assert!(
        (num(&fit, "center_2_hz") / 1e6 - 238.148).abs() < 0.5,
        "{fit}"
    );
    assert!((num(&fit, "fwhm_1_hz") / 13e6 - 1.0).abs() < 0.2);
    assert!(num(&fit, "center_1_hz_sigma") > 0.0);
    assert!(fit["center_1_display"].as_str().unwrap().ends_with("MHz"));
}

#[test]
fn noiseless_output_is_byte_identical() {
    let args = [
        "simulate",
        "--b0-gauss",
        "60",
        "--theta-deg",
        "20",
        "--points",
        "101",
    ];
    let a = odmr(&args);
    let b = odmr(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let (spec, meta) = parse_spectrum_csv(std::str::from_utf8(&a.stdout).unwrap()).unwrap();
    assert_eq!(spec.len(), 101);
    assert!(meta.iter().any(|(k, _)| k == "b0_t"), "{meta:?}");
}

#[test]
fn zero_field_gives_a_single_dip_at_2d() {
    let out = ok_stdout(&["simulate", "--b0-gauss", "0", "--points", "2301"]);
    let (spec, _) = parse_spectrum_csv(&out).unwrap();
    let (i, _) = spec
        .signal
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    assert!((spec.freq_hz[i] / 1e6 - 70.0).abs() < 0.1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zero.csv");
    std::fs::write(&path, &out).unwrap();
    let fit = json(&["fit", "odmr", path.to_str().unwrap(), "--peaks", "1"]);
    assert!((num(&fit, "center_1_hz") / 1e6 - 70.0).abs() < 1e-3);
}

#[test]
fn saturation_fit_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sat.csv");
    let mut text = String::from("power_mw,counts_cps\n");
    for p in [2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 400.0, 800.0] {
        text.push_str(&format!("{p},{}\n", 935e6 / (1.0 + 300.0 / p)));
    }
    std::fs::write(&path, text).unwrap();
    let fit = json(&["fit", "saturation", path.to_str().unwrap()]);
    assert!((num(&fit, "i_s_cps") / 935e6 - 1.0).abs() < 1e-6);
    assert!((num(&fit, "p0_mw") / 300.0 - 1.0).abs() < 1e-6);
}

#[test]
fn malformed_csv_exits_1_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(
        &path,
        "# odmr-csv v1\nfrequency_hz,signal\n1e8,0\n2e8,zzz\n",
    )
    .unwrap();
    let out = odmr(&["fit", "odmr", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
    let out = odmr(&[
        "fit",
        "odmr",
        dir.path().join("missing.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invert_examples() {
    let r = json(&["invert", "--nu1-mhz", "98.148", "--nu2-mhz", "238.148"]);
    assert!((num(&r, "b0_t") / 1e-4 - 60.0).abs() < 0.05);
    assert!(num(&r, "theta_rad").to_degrees() < 0.5);
    assert_eq!(r["degenerate"], Value::Bool(false));

    let out = odmr(&["invert", "--nu1-mhz", "70", "--nu2-mhz", "70"]);
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["degenerate"], Value::Bool(true));
    assert!(String::from_utf8_lossy(&out.stderr).contains("DEGENERATE"));

    let a = json(&[
        "invert",
        "--axial",
        "--nu1-mhz",
        "266.30",
        "--nu2-mhz",
        "406.30",
    ]);
    assert!((num(&a, "b0_t") / 1e-4 - 120.0).abs() < 0.01);
    let out = odmr(&["invert", "--axial", "--nu1-mhz", "70", "--nu2-mhz", "70"]);
    assert_eq!(out.status.code(), Some(1));
    let out = odmr(&["invert", "--nu1-mhz", "5000", "--nu2-mhz", "9000"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tilted_forward_and_back() {
    let c = odmr_core::PhysicalConstants::default();
    let p = odmr_core::spin::resonances(
        &odmr_core::FieldVector::from_gauss_deg(60.0, 30.0).unwrap(),
        &c,
    );
    let r = json(&[
        "invert",
        "--nu1-mhz",
        &format!("{}", p.nu1_hz / 1e6),
        "--nu2-mhz",
        &format!("{}", p.nu2_hz / 1e6),
    ]);
    assert!((num(&r, "b0_t") / 1e-4 - 60.0).abs() < 0.1);
    assert!((num(&r, "theta_rad").to_degrees() - 30.0).abs() < 0.5);
}

#[test]
fn field_sweep_endpoints() {
    let out = ok_stdout(&["sweep", "field"]);
    let rows = sweep_rows(&out);
    assert_eq!(rows.len(), 241);
    let first = &rows[0];
    let last = rows.last().unwrap();
    assert_eq!(first[0], 0.0);
    assert!((first[1] / 1e6 - 70.0).abs() < 1e-3 && (first[2] / 1e6 - 70.0).abs() < 1e-3);
    assert!((last[0] / 1e-4 - 120.0).abs() < 1e-9);
    assert!((last[1] / 1e6 - 266.30).abs() < 0.01 && (last[2] / 1e6 - 406.30).abs() < 0.01);
}

#[test]
fn angle_sweep_gap_closes_between_50_and_60_degrees() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("angle.svg");
    let out = ok_stdout(&[
        "sweep",
        "angle",
        "--points",
        "901",
        "--svg",
        svg.to_str().unwrap(),
    ]);
    let theta: f64 = sweep_meta(&out, "min_gap_theta_rad").parse().unwrap();
    assert!(
        (50.0..=60.0).contains(&theta.to_degrees()),
        "{}",
        theta.to_degrees()
    );
    assert_eq!(
        std::fs::read_to_string(&svg)
            .unwrap()
            .matches("<polyline")
            .count(),
        2
    );
}

#[test]
fn laser_sweep_ratio() {
    let rows = sweep_rows(&ok_stdout(&["sweep", "laser"]));
    let ratio = rows[0][2] / rows.last().unwrap()[2];
    assert!((ratio - 8.15).abs() < 0.01, "{ratio}");
}

#[test]
fn mw_sweep_optimum_near_19_dbm() {
    let out = ok_stdout(&["sweep", "mw", "--points", "3001"]);
    let best: f64 = sweep_meta(&out, "argmin_mw_dbm").parse().unwrap();
    assert!((best - 19.0).abs() < 0.2, "{best}");
    assert_eq!(sweep_rows(&out)[0].len(), 4);
}

#[test]
fn sensitivity_json() {
    let r = json(&[
        "sensitivity",
        "--contrast",
        "1.8e-3",
        "--fwhm-mhz",
        "13",
        "--laser-mw",
        "85",
    ]);
    assert!((num(&r, "eta_t_per_sqrt_hz") / 1e-6 - 13.81).abs() < 0.01);
    assert!(r["eta_display"].as_str().unwrap().contains("uT"));
    let r = json(&[
        "sensitivity",
        "--contrast",
        "1.8e-3",
        "--fwhm-mhz",
        "13",
        "--rate-cps",
        "2.064e8",
    ]);
    assert!((num(&r, "eta_t_per_sqrt_hz") / 1e-6 - 13.81).abs() < 0.01);
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["simulate"][..],
        &["simulate", "--b0-gauss", "-5"],
        &["simulate", "--b0-gauss", "60", "--fmin-mhz", "300"],
        &["fit", "spectrum", "x.csv"],
        &["sweep", "angle", "--from", "0", "--to", "120"],
        &["sweep", "field", "--from", "50", "--to", "10"],
        &["sweep", "laser", "--points", "1"],
        &[
            "sensitivity",
            "--contrast",
            "0",
            "--fwhm-mhz",
            "13",
            "--rate-cps",
            "1e8",
        ],
        &["sensitivity", "--contrast", "1e-3", "--fwhm-mhz", "13"],
        &["invert", "--nu1-mhz", "-1", "--nu2-mhz", "10"],
        &["bogus"],
    ] {
        let out = odmr(args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "odmr {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn unwritable_output_exits_1() {
    let out = odmr(&[
        "simulate",
        "--b0-gauss",
        "60",
        "-o",
        "/nonexistent-dir/x.csv",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["simulate", "fit", "invert", "sweep", "sensitivity"] {
        let out = odmr(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(
            String::from_utf8_lossy(&out.stdout).contains("Usage"),
            "{sub}"
        );
    }
    assert_eq!(odmr(&["--help"]).status.code(), Some(0));
}

fn with_config(path: &Path, args: &[&str], via_env: bool) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_odmr"));
    cmd.env_remove("ODMR_CONFIG");
    if via_env {
        cmd.env("ODMR_CONFIG", path);
    } else {
        cmd.arg("--config").arg(path);
    }
    cmd.args(args).output().unwrap()
}

#[test]
fn config_file_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.conf");
    std::fs::write(&good, "# shifted zero-field splitting\nd_mhz = 36.6\n").unwrap();
    let args = ["sweep", "field", "--to", "10", "--points", "2"];
    for via_env in [false, true] {
        let out = with_config(&good, &args, via_env);
        assert!(out.status.success());
        let rows = sweep_rows(&String::from_utf8(out.stdout).unwrap());
        assert!((rows[0][1] / 1e6 - 73.2).abs() < 1e-6);
    }

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "d_mhz = 35\nzfs_mhz = 3\n").unwrap();
    let out = with_config(&bad, &args, false);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key `zfs_mhz`"));

    // --config wins over the environment.
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_odmr"));
    let out = cmd
        .env("ODMR_CONFIG", &bad)
        .arg("--config")
        .arg(&good)
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success());
}
