//! Subcommands and exit codes.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{ConfigError, Experiment};
use crate::output;
use crate::run::run_study;
use crate::verify::run_checks;

pub const EXIT_OK: i32 = 0;
/// Output files could not be written.
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;
/// At least one row did not converge or failed; partial artifacts are kept.
pub const EXIT_NOT_CONVERGED: i32 = 3;
/// At least one invariant suite failed.
pub const EXIT_VERIFY_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "slabrt", version, about = "Low-rank solver for slab radiative transfer benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Experiment description (TOML).
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Overrides `jobs` (rows solved in parallel).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the convergence study and write table.csv, traces and summary.json.
    Solve(RunArgs),
    /// Run the small-size invariant suites and print one line per suite.
    Verify(RunArgs),
}

fn report(kind: &str, code: i32, message: &str, rows: Option<&[slabrt_core::study::StudyRow]>) -> i32 {
    eprintln!("{}", output::to_pretty(&output::error_report(kind, code, message, rows)).trim_end());
    code
}

fn load(args: &RunArgs) -> Result<Experiment, ConfigError> {
    let mut cfg = crate::config::ExperimentConfig::load(&args.config)?;
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(jobs) = args.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()
}

pub fn execute(cli: &Cli) -> i32 {
    match &cli.command {
        Command::Solve(args) => solve(args),
        Command::Verify(args) => verify(args),
    }
}

pub fn solve(args: &RunArgs) -> i32 {
    let exp = match load(args) {
        Ok(e) => e,
        Err(e) => return report("invalid_config", EXIT_INVALID_CONFIG, &e.to_string(), None),
    };
    let rows = run_study(&exp, exp.config.jobs);
    let dir = exp.config.output_dir.clone();
    if let Err(e) = output::write_artifacts(&dir, &exp, &rows) {
        return report("io", EXIT_IO, &format!("writing {}: {e}", dir.display()), Some(&rows));
    }
    if rows.iter().all(|r| r.converged()) {
        EXIT_OK
    } else {
        report(
            "not_converged",
            EXIT_NOT_CONVERGED,
            "at least one row did not converge; partial artifacts were written",
            Some(&rows),
        )
    }
}

pub fn verify(args: &RunArgs) -> i32 {
    let exp = match load(args) {
        Ok(e) => e,
        Err(e) => return report("invalid_config", EXIT_INVALID_CONFIG, &e.to_string(), None),
    };
    let checks = run_checks(&exp);
    for c in &checks {
        println!("{} {}: {}", c.label(), c.name, c.detail);
    }
    if let Some(dir) = &args.output_dir {
        let v = serde_json::json!({
            "config": output::config_echo(&exp),
            "checks": checks.iter().map(|c| serde_json::json!({
                "name": c.name, "passed": c.passed, "skipped": c.skipped, "detail": c.detail,
            })).collect::<Vec<_>>(),
        });
        let written = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join("verify.json"), output::to_pretty(&v)));
        if let Err(e) = written {
            return report("io", EXIT_IO, &format!("writing {}: {e}", dir.display()), None);
        }
    }
    if checks.iter().all(|c| c.passed) {
        EXIT_OK
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        report("verification_failed", EXIT_VERIFY_FAILED, &failed.join(", "), None)
    }
}
