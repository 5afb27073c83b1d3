//! Experiment harness: reads a `key=value` experiment file, runs one of the
//! scaling experiments, and writes `table.csv`, `report.json` and
//! `manifest.json` into the output directory.

pub mod experiments;
pub mod spec;
pub mod table;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use lorentz_core::Error as CoreError;

pub use experiments::{execute, Check, Outcome};
pub use spec::{ExperimentSpec, Subcommand};
pub use table::ConvergenceTable;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("spec error: {0}")]
    Spec(String),
    #[error("numeric guard: {0}")]
    Numeric(String),
    #[error("statistical check failed: {0}")]
    Statistical(String),
    #[error("io error: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Spec(_) => 2,
            HarnessError::Numeric(_) => 3,
            HarnessError::Statistical(_) => 4,
            HarnessError::Io(_) => 1,
        }
    }
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter { .. } | CoreError::Config { .. } | CoreError::Parse(_) | CoreError::QueryRadius { .. } => {
                HarnessError::Spec(e.to_string())
            }
            CoreError::Io(m) => HarnessError::Io(m),
            _ => HarnessError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

/// Hex SHA-256 of the experiment file text.
pub fn spec_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub spec: String,
    pub spec_sha256: String,
    pub seed: u64,
    pub version: String,
    pub workers: usize,
    pub wall_time_s: f64,
    pub artifacts: Vec<String>,
    pub checks_passed: bool,
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub outcome: Outcome,
    pub manifest: Manifest,
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), HarnessError> {
    fs::write(dir.join(name), body).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.join(name).display())))
}

/// Runs the experiment and writes its artifacts. With `strict`, a failed
/// statistical check becomes an error after the artifacts are written.
pub fn run(spec: &ExperimentSpec, strict: bool) -> Result<RunSummary, HarnessError> {
    let start = Instant::now();
    let outcome = execute(spec)?;
    let dir = spec.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    let hash = spec_hash(&spec.text);
    let meta = vec![
        ("subcommand".to_string(), spec.subcommand.to_string()),
        ("spec_sha256".to_string(), hash.clone()),
        ("seed".to_string(), spec.seed.to_string()),
    ];
    let mut csv = String::new();
    for (k, v) in &meta {
        csv.push_str(&format!("# {k}={v}\n"));
    }
    csv.push_str(&outcome.table_csv);
    write(&dir, "table.csv", &csv)?;
    let mut artifacts = vec!["table.csv".to_string(), "report.json".to_string()];
    for (name, body) in &outcome.extra {
        let mut text = String::new();
        for (k, v) in &meta {
            text.push_str(&format!("# {k}={v}\n"));
        }
        text.push_str(body);
        write(&dir, name, &text)?;
        artifacts.push(name.clone());
    }
    let mut report = outcome.report.clone();
    report.insert("subcommand".into(), spec.subcommand.to_string().into());
    report.insert("spec_sha256".into(), hash.clone().into());
    report.insert("seed".into(), spec.seed.into());
    report.insert("checks".into(), serde_json::to_value(&outcome.checks).expect("checks serialize"));
    let report_text = serde_json::to_string_pretty(&report).expect("report serializes");
    write(&dir, "report.json", &report_text)?;
    artifacts.push("manifest.json".into());
    let checks_passed = outcome.checks.iter().all(|c| c.passed);
    let manifest = Manifest {
        subcommand: spec.subcommand.to_string(),
        spec: spec.text.clone(),
        spec_sha256: hash,
        seed: spec.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        workers: rayon::current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        artifacts,
        checks_passed,
    };
    write(
        &dir,
        "manifest.json",
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    if strict && !checks_passed {
        let failed: Vec<&str> = outcome.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(HarnessError::Statistical(failed.join(", ")));
    }
    Ok(RunSummary {
        out_dir: dir,
        outcome,
        manifest,
    })
}
