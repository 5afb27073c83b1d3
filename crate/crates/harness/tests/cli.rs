//! End-to-end runs of the `lorentz-diffuse` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const DIFFUSION: &str = "dim=2\nspeed=1\nB=1\nalpha=0.25\nepsilon=0.01\n";
const GREEN_KUBO: &str = "dim=2\nspeed=1\nB=1\nalpha=0.25\nepsilon=0.01\nmethods=spectral,green-kubo\nn_paths=2000\nt_end=5\n";

fn run_cli(dir: &Path, sub: &str, spec: &str, out: &str, extra: &[&str]) -> (Output, PathBuf) {
    let spec_path = dir.join(format!("{out}.spec"));
    fs::write(&spec_path, spec).unwrap();
    let out_dir = dir.join(out);
    let output = Command::new(env!("CARGO_BIN_EXE_lorentz-diffuse"))
        .arg(sub)
        .arg("--spec")
        .arg(&spec_path)
        .arg("--out")
        .arg(&out_dir)
        .args(extra)
        .output()
        .unwrap();
    (output, out_dir)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn spectral_diffusion_reports_one_half() {
    let tmp = TempDir::new().unwrap();
    let (out, dir) = run_cli(tmp.path(), "diffusion", DIFFUSION, "d", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.join("report.json"));
    let d = report["estimates"][0]["D"].as_f64().unwrap();
    assert!((d - 0.5).abs() < 1e-12);
    assert_eq!(report["estimates"][0]["method"], "spectral");
}

#[test]
fn zero_coupling_table_is_identically_zero() {
    let tmp = TempDir::new().unwrap();
    let spec = "dim=2\nspeed=1\nalpha=0.25\ncoupling=0\nepsilon=0.01\n";
    let (out, dir) = run_cli(tmp.path(), "scatter-table", spec, "s", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join("table.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert!(rows.len() > 64);
    for row in rows {
        let theta: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(theta, 0.0);
    }
}

#[test]
fn invalid_specs_exit_with_status_two() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("diffusion", format!("{DIFFUSION}bogus=1\n")),
        ("diffusion", "dim=2\nspeed=1\nalpha=0.7\nepsilon=0.01\n".to_string()),
        (
            "relax-to-average",
            format!("{DIFFUSION}delta=1\neta_exponent=0.1\nt_eta_exponent=0.1\n"),
        ),
        ("converge-theta", format!("{DIFFUSION}epsilon_sweep=0.001,0.01\n")),
    ];
    for (i, (sub, spec)) in cases.iter().enumerate() {
        let (out, _) = run_cli(tmp.path(), sub, spec, &format!("bad{i}"), &[]);
        assert_eq!(out.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let (out, _) = run_cli(tmp.path(), "no-such-experiment", DIFFUSION, "bad_sub", &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strict_mode_turns_failed_checks_into_status_four() {
    let tmp = TempDir::new().unwrap();
    let spec = format!("{DIFFUSION}methods=msd\nn_particles=20\nt_end=2\nfit_start=0.5\n");
    let (loose, dir) = run_cli(tmp.path(), "diffusion", &spec, "loose", &[]);
    assert!(loose.status.success());
    assert!(String::from_utf8_lossy(&loose.stdout).contains("FAIL"));
    assert_eq!(json(&dir.join("manifest.json"))["checks_passed"], false);
    let (strict, _) = run_cli(tmp.path(), "diffusion", &spec, "strict", &["--strict"]);
    assert_eq!(strict.status.code(), Some(4));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, da) = run_cli(tmp.path(), "diffusion", GREEN_KUBO, "a", &["--seed", "5"]);
    let (b, db) = run_cli(tmp.path(), "diffusion", GREEN_KUBO, "b", &["--seed", "5"]);
    assert!(a.status.success() && b.status.success());
    for name in ["table.csv", "report.json", "vacf.csv"] {
        assert_eq!(fs::read(da.join(name)).unwrap(), fs::read(db.join(name)).unwrap(), "{name}");
    }
    let (c, dc) = run_cli(tmp.path(), "diffusion", GREEN_KUBO, "c", &["--seed", "6"]);
    assert!(c.status.success());
    assert_ne!(fs::read(da.join("vacf.csv")).unwrap(), fs::read(dc.join("vacf.csv")).unwrap());
}

#[test]
fn worker_count_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let (a, da) = run_cli(tmp.path(), "diffusion", GREEN_KUBO, "w1", &["--workers", "1"]);
    let (b, db) = run_cli(tmp.path(), "diffusion", GREEN_KUBO, "w3", &["--workers", "3"]);
    assert!(a.status.success() && b.status.success());
    for name in ["table.csv", "report.json", "vacf.csv"] {
        assert_eq!(fs::read(da.join(name)).unwrap(), fs::read(db.join(name)).unwrap(), "{name}");
    }
    assert_eq!(json(&db.join("manifest.json"))["workers"], 3);
}

#[test]
fn manifest_names_spec_hash_seed_and_artifacts() {
    let tmp = TempDir::new().unwrap();
    let (out, dir) = run_cli(tmp.path(), "diffusion", GREEN_KUBO, "m", &["--seed", "9"]);
    assert!(out.status.success());
    let manifest = json(&dir.join("manifest.json"));
    let hash = manifest["spec_sha256"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(hash, lorentz_diffuse::spec_hash(GREEN_KUBO));
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["subcommand"], "diffusion");
    assert_eq!(manifest["spec"], GREEN_KUBO);
    assert_eq!(manifest["checks_passed"], true);
    let artifacts: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    for name in &artifacts {
        assert!(dir.join(name).exists(), "{name}");
    }
    for name in ["table.csv", "vacf.csv"] {
        let text = fs::read_to_string(dir.join(name)).unwrap();
        assert!(text.contains(&format!("# spec_sha256={hash}")) && text.contains("# seed=9"), "{name}");
    }
    let report = json(&dir.join("report.json"));
    assert_eq!(report["spec_sha256"], hash.as_str());
    assert_eq!(report["seed"], 9);
}
