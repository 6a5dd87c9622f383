//! `edgetune` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edgetune::harness::{compare, run, Policy, RunConfig};
use edgetune::selftest::run_selftest;
use edgetune::workload::{export_workload, WorkloadSpec};
use edgetune::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "edgetune",
    version,
    about = "On-device continual-learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replaces both the run seed and the workload seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report.json, requests.csv and rounds.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several policies over one shared workload.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated, e.g. `immediate,static:20,lazytune,simfreeze,etuner`.
        #[arg(long, default_value = "immediate,static:20,lazytune,simfreeze,etuner")]
        policies: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for comparison.csv and one report directory per policy.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a workload and export its description as JSON.
    GenWorkload {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default benchmark config.
    InitConfig {
        #[arg(long, default_value = "etuner")]
        policy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in invariant suite.
    Selftest,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Numeric(_) => EXIT_NUMERIC,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", path.display()),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| config_failure(path, e))?;
    let cfg = RunConfig::from_json(&text).map_err(|e| config_failure(path, e))?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let report = run(&cfg)?;
            if let Some(dir) = out.or_else(|| cfg.out.clone()) {
                report.write_dir(&dir)?;
            }
            println!(
                "policy={} seed={} avg_accuracy={:.6} rounds={} time_s={:.3} energy_j={:.3} flops={}",
                report.policy,
                report.seed,
                report.avg_inference_accuracy,
                report.round_count,
                report.total_time,
                report.total_energy,
                report.total_flops
            );
        }
        Command::Compare {
            config,
            policies,
            seed,
            out,
        } => {
            let cfg = load_config(&config, seed)?;
            let policies = Policy::parse_list(&policies)?;
            let table = compare(&cfg, &policies)?;
            let csv = table.to_csv()?;
            if let Some(dir) = out.or_else(|| cfg.out.clone()) {
                write_file(&dir.join("comparison.csv"), &csv)?;
                for r in &table.reports {
                    let name = r.policy.to_string().replace(':', "_");
                    r.write_dir(&dir.join(name))?;
                }
            }
            print!("{csv}");
        }
        Command::GenWorkload { spec, out } => {
            let text = fs::read_to_string(&spec).map_err(|e| config_failure(&spec, e))?;
            let spec_value: WorkloadSpec =
                serde_json::from_str(&text).map_err(|e| config_failure(&spec, e))?;
            let export = export_workload(&spec_value)?;
            for w in &export.warnings {
                eprintln!("warning: {w}");
            }
            let json = serde_json::to_string_pretty(&export).map_err(Error::from)?;
            write_file(&out, &json)?;
        }
        Command::InitConfig { policy, seed } => {
            let cfg = RunConfig::benchmark(seed, policy.parse()?);
            println!(
                "{}",
                serde_json::to_string_pretty(&cfg).map_err(Error::from)?
            );
        }
        Command::Selftest => {
            let checks = run_selftest();
            for c in &checks {
                println!(
                    "[{}] {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(Failure {
                    code: EXIT_FAILURE,
                    message: format!("{failed} selftest check(s) failed"),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
