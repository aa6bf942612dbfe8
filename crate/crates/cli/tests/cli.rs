use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn reference_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.json")
}

fn spinsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinsim")).args(args).env_remove("SPINSIM_OUT").output().expect("spawn spinsim")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect()
}

fn events(path: &Path) -> Vec<(String, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let parts: Vec<&str> = l.split(',').collect();
            (parts[0].to_string(), parts[2].parse().unwrap())
        })
        .collect()
}

fn write_config(dir: &Path, name: &str, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(reference_config()).unwrap()).unwrap();
    edit(&mut cfg);
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn reference_run_writes_outputs_and_plots() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = spinsim(&["run", "--config", p(&reference_config()), "--out", p(&out), "--plot"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["telemetry.csv", "events.csv", "summary.txt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let svgs: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "svg"))
        .collect();
    assert_eq!(svgs.len(), 5);
    for e in &svgs {
        let svg = fs::read_to_string(e.path()).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<polyline") && svg.trim_end().ends_with("</svg>"));
    }

    let ev = events(&out.join("events.csv"));
    let ids: Vec<&str> = ev.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, ["t0", "t1", "t2", "t3", "t4"]);
    assert!(ev.windows(2).all(|w| w[0].1 < w[1].1));

    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("status = complete"));
    assert!(summary.contains("constraint_violations = 0"));
    let ratio: f64 = summary.lines().find_map(|l| l.strip_prefix("transfer_ratio = ")).unwrap().parse().unwrap();
    assert!((ratio - 1.0).abs() < 0.01, "transfer ratio {ratio}");

    let rows = csv_rows(&out.join("telemetry.csv"));
    let last = rows.last().unwrap();
    assert_eq!(last[22], 4.0);
    assert!((last[0] - ev[4].1).abs() < 1e-12);
}

#[test]
fn telemetry_header_and_first_record_match_golden() {
    let tmp = TempDir::new().unwrap();
    let o = spinsim(&["run", "--config", p(&reference_config()), "--out", p(tmp.path()), "--duration", "0.5"]);
    // A half-second run stops before the mission ends.
    assert_eq!(o.status.code(), Some(2));
    let text = fs::read_to_string(tmp.path().join("telemetry.csv")).unwrap();
    let head: Vec<&str> = text.lines().take(2).collect();
    let golden = include_str!("golden/reference_head.csv");
    let expected: Vec<&str> = golden.lines().collect();
    assert_eq!(head, expected);
}

#[test]
fn first_record_reflects_initial_conditions() {
    // Independent of the golden file: at t = 0 the base is at rest, so the
    // relative rate is the target spin and V is the attitude term plus half
    // the squared spin rate.
    let golden = include_str!("golden/reference_head.csv");
    let header: Vec<&str> = golden.lines().next().unwrap().split(',').collect();
    let row: Vec<f64> = golden.lines().nth(1).unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    let spin = 0.0265;
    let q = [0.14942924536134225, 0.14942924536134225, 0.14942924536134225, 0.9659258262890683];
    let w = (col("wrel_x").powi(2) + col("wrel_y").powi(2) + col("wrel_z").powi(2)).sqrt();
    assert!((w - spin).abs() < 1e-15);
    for (name, v) in ["q1", "q2", "q3", "q0"].iter().zip(q) {
        assert!((col(name) - v).abs() < 1e-15);
    }
    assert!((col("h_target") - 40.0 * spin).abs() < 1e-14);
    let kp = 1.8f64 * 1.8;
    let att = q[0].powi(2) * 3.0 + (q[3] - 1.0).powi(2);
    assert!((col("V") - (kp * att + 0.5 * spin * spin)).abs() < 1e-14);
    assert_eq!(col("t"), 0.0);
    assert_eq!(col("phase"), 1.0);
}

#[test]
fn non_spd_inertia_is_a_validation_error_without_output() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", |c| {
        c["base"]["inertia_kgm2"] = serde_json::json!([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]);
    });
    let out = tmp.path().join("out");
    let o = spinsim(&["run", "--config", p(&cfg), "--out", p(&out), "--plot"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("base.inertia_kgm2"), "{err}");
    assert!(!out.exists());
}

#[test]
fn triangle_inequality_violation_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "flat.json", |c| {
        c["target"]["inertia_kgm2"] = serde_json::json!([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 10.0]]);
    });
    let out = tmp.path().join("out");
    let o = spinsim(&["run", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("target.inertia_kgm2"));
    assert!(!out.exists());
}

#[test]
fn bad_overrides_are_validation_errors() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = reference_config();
    for args in [["--dt", "0"], ["--dt", "-0.1"], ["--duration", "-3"]] {
        let mut full = vec!["run", "--config", p(&cfg), "--out", p(&out)];
        full.extend(args);
        let o = spinsim(&full);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(args[0]));
    }
    assert!(!out.exists());
}

#[test]
fn missing_config_file_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let o = spinsim(&["run", "--config", p(&tmp.path().join("nope.json")), "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_64() {
    let o = spinsim(&["run", "--config", p(&reference_config()), "--bogus"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(spinsim(&["run", "--config", "x.json", "--phase", "D"]).status.code(), Some(64));
    assert_eq!(spinsim(&["fly"]).status.code(), Some(64));
    assert_eq!(spinsim(&["run"]).status.code(), Some(64));
    assert_eq!(spinsim(&["--help"]).status.code(), Some(0));
}

#[test]
fn phase_c_only_run_detumbles_at_constant_rate() {
    let tmp = TempDir::new().unwrap();
    let o = spinsim(&["run", "--config", p(&reference_config()), "--out", p(tmp.path()), "--phase", "C"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ev = events(&tmp.path().join("events.csv"));
    let ids: Vec<&str> = ev.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, ["t3", "t4"]);
    assert_eq!(ev[0].1, 0.0);

    let rows = csv_rows(&tmp.path().join("telemetry.csv"));
    assert!(rows.iter().all(|r| r[22] == 3.0 || r[22] == 4.0));
    // Wheel-limited decay: the compound momentum falls linearly, so the wheel
    // momentum magnitude at the end is the target's initial momentum and the
    // phase lasts about h / sigma.
    let detumbling: Vec<&Vec<f64>> = rows.iter().filter(|r| r[22] == 3.0).collect();
    let sigma = detumbling[1][21];
    assert!(sigma > 0.0);
    assert!(detumbling[1..detumbling.len() - 1].iter().all(|r| (r[21] - sigma).abs() < 1e-9 * sigma));
    let last = rows.last().unwrap();
    assert!((last[19] - 1.06).abs() < 1e-3, "wheel momentum {}", last[19]);
}

#[test]
fn halving_wheel_torque_roughly_doubles_detumbling() {
    let tmp = TempDir::new().unwrap();
    let full = reference_config();
    let half = write_config(tmp.path(), "half.json", |c| {
        let v = c["limits"]["tau_r_max_Nm"].as_f64().unwrap();
        c["limits"]["tau_r_max_Nm"] = serde_json::json!(v / 2.0);
    });
    let sweep = tmp.path().join("sweep.txt");
    fs::write(&sweep, format!("# wheel torque sweep\n{}\n\n{}\n", p(&full), p(&half))).unwrap();
    let out = tmp.path().join("sweep_out");
    let o = spinsim(&["run", "--sweep", p(&sweep), "--out", p(&out), "--phase", "C"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let duration = |dir: &str| {
        let ev = events(&out.join(dir).join("events.csv"));
        ev[1].1 - ev[0].1
    };
    let ratio = duration("001_half") / duration("000_reference");
    assert!((ratio - 2.0).abs() < 0.2, "duration ratio {ratio}");
}

#[test]
fn sweep_reports_the_worst_exit_code() {
    let tmp = TempDir::new().unwrap();
    let bad = write_config(tmp.path(), "bad.json", |c| c["target"]["mass_kg"] = serde_json::json!(-1.0));
    let sweep = tmp.path().join("sweep.txt");
    fs::write(&sweep, format!("{}\n{}\n", p(&reference_config()), p(&bad))).unwrap();
    let out = tmp.path().join("out");
    let o = spinsim(&["run", "--sweep", p(&sweep), "--out", p(&out), "--phase", "C"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(out.join("000_reference/telemetry.csv").is_file());
    assert!(!out.join("001_bad").exists());
}

#[test]
fn output_directory_defaults_from_environment() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("env_out");
    let o = Command::new(env!("CARGO_BIN_EXE_spinsim"))
        .args(["run", "--config", p(&reference_config()), "--phase", "C"])
        .env("SPINSIM_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("telemetry.csv").is_file());
}

#[test]
fn identical_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = spinsim(&["run", "--config", p(&reference_config()), "--out", p(dir), "--duration", "30"]);
        assert_eq!(o.status.code(), Some(2));
    }
    for f in ["telemetry.csv", "events.csv", "summary.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}
