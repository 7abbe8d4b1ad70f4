use std::path::Path;
use std::process::{Command, Output};

fn mkv(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mkv-lab"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const SMALL: &[&str] = &["--particles", "100", "--paths", "40", "--steps", "20"];

#[test]
fn zero_model_riccati_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zero.cfg");
    std::fs::write(&cfg, "model.n = 2\nmodel.k = 1\nmodel.R = [[1]]\ngrids.riccati_steps = 10\n").unwrap();
    let out = mkv(dir.path(), &["riccati", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(read(dir.path(), "riccati.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("t,P1_11"));
    let mut rows = 0;
    for line in lines {
        rows += 1;
        assert!(line.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{line}");
    }
    assert_eq!(rows, 11);
}

#[test]
fn missing_r_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "model.n = 1\nmodel.Q = [[1]]\n").unwrap();
    let out = mkv(dir.path(), &["riccati", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.R"));
}

#[test]
fn usage_and_validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mkv(dir.path(), &["nonsense"]).status.code(), Some(2));
    assert_eq!(mkv(dir.path(), &["riccati", "--set", "model.Q=[[-1]]"]).status.code(), Some(2));
    assert_eq!(mkv(dir.path(), &["riccati", "--set", "grids.unknown=1"]).status.code(), Some(2));
    assert_eq!(mkv(dir.path(), &["riccati", "--set", "noequals"]).status.code(), Some(2));
    assert_eq!(mkv(dir.path(), &["riccati", "--config", "/nonexistent.cfg"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = mkv(dir.path(), &["riccati", "--set", "model.A=[[1e200]]"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failed_check_exits_1() {
    // one Euler step over the whole horizon is far too coarse
    let dir = tempfile::tempdir().unwrap();
    let out = mkv(dir.path(), &["dpp", "--set", "dpp.delta=1", "--steps", "1", "--particles", "200", "--paths", "200"]);
    assert_eq!(out.status.code(), Some(1));
    let csv = String::from_utf8(read(dir.path(), "checks.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",false,"));
}

#[test]
fn verify_all_subset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = mkv(dir.path(), &["verify-all", "--set", "checks.only=terminal,w2,law_invariance,rk4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let summary = String::from_utf8(read(dir.path(), "summary.txt")).unwrap();
    assert!(summary.contains("PASS terminal_exactness") && summary.contains("PASS rk4_order"));
}

#[test]
fn same_config_and_seed_give_identical_csvs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    // the regression needs at least ten paths per basis function
    let dpp_sizes: &[&str] = &["--particles", "50", "--paths", "600", "--steps", "20"];
    let cases: &[(&str, &[&str], &[&str])] = &[
        ("riccati", SMALL, &["riccati.csv"]),
        ("value", SMALL, &["value.csv"]),
        ("hjb-residual", SMALL, &["hjb_residual.csv"]),
        ("simulate", SMALL, &["ensemble.csv", "noise.csv"]),
        ("cost", SMALL, &["cost.csv"]),
        ("gexp", SMALL, &["gexp.csv", "gexp_bsde.csv"]),
        ("dpp", dpp_sizes, &["checks.csv"]),
    ];
    for (cmd, sizes, files) in cases {
        for dir in [a.path(), b.path()] {
            let mut args = vec![*cmd, "--seed", "5"];
            args.extend_from_slice(sizes);
            let out = mkv(dir, &args);
            assert!(matches!(out.status.code(), Some(0 | 1)), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        }
        for f in *files {
            assert_eq!(read(a.path(), f), read(b.path(), f), "{cmd}: {f} differs");
        }
        let manifest = |d: &Path| -> String {
            String::from_utf8(read(d, "manifest.txt"))
                .unwrap()
                .lines()
                .filter(|l| !l.starts_with("output.dir"))
                .collect()
        };
        assert_eq!(manifest(a.path()), manifest(b.path()));
    }
    let mut args = vec!["cost", "--seed", "6"];
    args.extend_from_slice(SMALL);
    mkv(b.path(), &args);
    assert_ne!(read(a.path(), "cost.csv"), read(b.path(), "cost.csv"));
}

#[test]
fn manifest_records_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = mkv(dir.path(), &["riccati", "--seed", "99", "--set", "model.beta=0.1"]);
    assert_eq!(out.status.code(), Some(0));
    let manifest = String::from_utf8(read(dir.path(), "manifest.txt")).unwrap();
    assert!(manifest.contains("command = riccati"));
    assert!(manifest.contains("seeds.master = 99"));
    assert!(manifest.contains("model.beta = 0.1"));
    assert!(manifest.contains(env!("CARGO_PKG_VERSION")));
    assert!(dir.path().join("timestamp.txt").exists());
}

#[test]
fn dedicated_flags_override_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = mkv(dir.path(), &["riccati", "--set", "seeds.master=1", "--seed", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let manifest = String::from_utf8(read(dir.path(), "manifest.txt")).unwrap();
    assert!(manifest.contains("seeds.master = 2"));
}
