use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use embedded_eigs::format::{read_potential, write_potential};
use embedded_eigs::model::Potential;
use embedded_eigs_cli::RunConfig;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("embedded-eigs-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embedded-eigs")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn small(energies: Vec<f64>, angles: Vec<f64>) -> RunConfig {
    let mut cfg = RunConfig::new(energies, angles);
    cfg.horizon = 200_000;
    cfg
}

#[test]
fn single_zero_energy_construct_then_verify() {
    let dir = scratch("zero");
    let cfg = write_config(&dir, &small(vec![0.0], vec![std::f64::consts::FRAC_PI_4]));
    let out = dir.join("out");
    let r = bin(&["construct", "--config", s(&cfg), "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["potential.toml", "trace_0.csv", "schedule.csv", "l2.csv", "run.log", "summary.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let r = bin(&["verify", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stdout));
    assert!(String::from_utf8_lossy(&r.stdout).contains("pass = true"));
}

#[test]
fn resonant_pair_builds_and_verifies() {
    let dir = scratch("pair");
    let cfg = write_config(&dir, &small(vec![1.0, -1.0], vec![std::f64::consts::FRAC_PI_3, std::f64::consts::PI / 5.0]));
    let out = dir.join("out");
    let r = bin(&["construct", "--config", s(&cfg), "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let r = bin(&["verify", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stdout));
}

#[test]
fn glued_file_targets_are_truncated_eigenvectors() {
    use std::f64::consts::PI;
    let dir = scratch("spectrum");
    let cfg = write_config(&dir, &small(vec![1.0, -1.0, 0.5], vec![PI / 4.0, PI / 3.0, PI / 6.0]));
    let out = dir.join("out");
    assert!(bin(&["construct", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let r = bin(&["spectrum", "--potential", s(&out.join("potential.toml")), "--truncation", "20000"]);
    assert!(r.status.success());
    let doc: toml::Table = toml::from_str(&String::from_utf8_lossy(&r.stdout)).unwrap();
    let targets = doc["targets"].as_array().unwrap();
    assert_eq!(targets.len(), 3);
    for t in targets {
        let overlap: f64 = t["eigenvector_overlap"].as_str().unwrap().parse().unwrap();
        assert!(overlap >= 0.99, "{overlap}");
    }
}

#[test]
fn duplicate_energies_give_error_record() {
    let dir = scratch("dup");
    let cfg = write_config(&dir, &small(vec![1.0, 1.0000000001], vec![0.1, 0.2]));
    let r = bin(&["construct", "--config", s(&cfg), "--out", s(&dir.join("out"))]);
    assert_eq!(r.status.code(), Some(1));
    let record: toml::Table = toml::from_str(&String::from_utf8_lossy(&r.stderr)).unwrap();
    assert_eq!(record["error"]["kind"].as_str(), Some("DuplicateEnergy"));
}

#[test]
fn corrupted_file_and_impossible_tolerance_fail_verification() {
    let dir = scratch("corrupt");
    let config = small(vec![0.5], vec![1.0]);
    let cfg = write_config(&dir, &config);
    let out = dir.join("out");
    assert!(bin(&["construct", "--config", s(&cfg), "--out", s(&out)]).status.success());

    let mut strict = config.clone();
    strict.tolerances.max_decay_slope = -1e6;
    let strict_path = dir.join("strict.toml");
    std::fs::write(&strict_path, strict.to_toml()).unwrap();
    let r = bin(&["verify", "--config", s(&strict_path), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));

    let path = out.join("potential.toml");
    let mut p = read_potential(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let c = p.checks.iter_mut().find(|c| c.v != 0.0).unwrap();
    c.v += 0.5;
    std::fs::write(&path, write_potential(&p)).unwrap();
    let r = bin(&["verify", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let report: toml::Table = toml::from_str(&String::from_utf8_lossy(&r.stdout)).unwrap();
    let replay = report["checks"].as_array().unwrap().iter().find(|c| c["name"].as_str() == Some("replay_mismatches")).unwrap();
    assert_eq!(replay["pass"].as_bool(), Some(false));
}

#[test]
fn free_laplacian_spectrum_and_size_error() {
    let dir = scratch("free");
    let path = dir.join("zero.toml");
    std::fs::write(&path, write_potential(&Potential::zero(200).unwrap())).unwrap();
    let r = bin(&["spectrum", "--potential", s(&path), "--truncation", "100", "--all"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let doc: toml::Table = toml::from_str(&String::from_utf8_lossy(&r.stdout)).unwrap();
    let eig: Vec<f64> = doc["eigenvalues"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().parse().unwrap()).collect();
    assert_eq!(eig.len(), 100);
    for (j, l) in eig.iter().enumerate() {
        let exact = 2.0 * (std::f64::consts::PI * (100 - j) as f64 / 101.0).cos();
        assert!((l - exact).abs() < 1e-10);
    }
    let r = bin(&["spectrum", "--potential", s(&path), "--truncation", "500"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("kind = \"Size\""));
}

#[test]
fn construct_is_byte_deterministic_and_exports() {
    let dir = scratch("det");
    let mut config = small(vec![1.0, -1.0, 0.5], vec![0.7, 1.0, 0.5]);
    config.horizon = 100_000;
    let cfg = write_config(&dir, &config);
    let (a, b) = (dir.join("a"), dir.join("b"));
    assert!(bin(&["construct", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(bin(&["construct", "--config", s(&cfg), "--out", s(&b)]).status.success());
    for f in ["potential.toml", "trace_0.csv", "trace_1.csv", "trace_2.csv", "schedule.csv", "l2.csv", "run.log"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let table = dir.join("v.csv");
    let r = bin(&["export", "--potential", s(&a.join("potential.toml")), "--range", "100..110", "--out", s(&table)]);
    assert!(r.status.success());
    assert_eq!(std::fs::read_to_string(&table).unwrap().lines().count(), 11);
}

#[test]
fn overrides_take_effect() {
    let dir = scratch("override");
    let cfg = write_config(&dir, &small(vec![0.0], vec![0.3]));
    let out = dir.join("out");
    let r = bin(&["construct", "--config", s(&cfg), "--out", s(&out), "--horizon", "50000", "--stop-factor", "4"]);
    assert!(r.status.success());
    let summary: toml::Table = toml::from_str(&std::fs::read_to_string(out.join("summary.toml")).unwrap()).unwrap();
    assert_eq!(summary["horizon"].as_integer(), Some(50_000));
}
