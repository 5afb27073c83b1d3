use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use lorentz_diffuse::{run, ExperimentSpec, HarnessError, Subcommand};

/// Scaling experiments for the weak-coupling Lorentz gas.
#[derive(Debug, Parser)]
#[command(name = "lorentz-diffuse", version)]
struct Cli {
    /// One of scatter-table, diffusion, converge-theta, converge-operator,
    /// converge-heat, relax-to-average.
    subcommand: String,
    /// Experiment file with `key=value` lines.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 4 when a statistical check fails.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    workers: Option<usize>,
}

fn main_inner(cli: Cli) -> Result<(), HarnessError> {
    let sub: Subcommand = cli.subcommand.parse()?;
    let text = std::fs::read_to_string(&cli.spec)
        .map_err(|e| HarnessError::Spec(format!("{}: {e}", cli.spec.display())))?;
    let mut spec = ExperimentSpec::parse(sub, &text)?;
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(o) = cli.out {
        spec.out_dir = o;
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(HarnessError::Spec("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Spec(format!("worker pool: {e}")))?;
    }
    let summary = run(&spec, cli.strict)?;
    for c in &summary.outcome.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("artifacts written to {}", summary.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lorentz-diffuse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
