use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qf_pool::allocation::{allocate_bhw_cqf, allocate_capped, qf_target, MatchingPool};
use qf_pool::equilibrium::{diagnostics, DiagnosticsRecord};
use qf_pool::ledger_csv::{load_ledger, load_ledger_with_ids};
use qf_pool::report::{allocations_csv, emit_round, emit_rounds, to_json, ReportFormat};
use qf_pool::rounds::{run_round, run_rounds};
use qf_pool::scenario::load_scenario;
use qf_pool::{allocation, Error};

#[derive(Parser)]
#[command(name = "qf-pool", version, about = "Capped-proportional quadratic funding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Allocate a matching pool for a ledger.
    Allocate {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        pool: f64,
        #[arg(long, value_enum, default_value_t = Rule::Capped)]
        rule: Rule,
        /// Write `allocations.csv` here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run best-response dynamics for the first round of a scenario.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::All)]
        format: Format,
    },
    /// Print equilibrium diagnostics for a ledger as JSON.
    Diagnose {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        pool: f64,
        /// Supplies ids and valuations.
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run every round of a scenario with rollover.
    Rounds {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::All)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Capped,
    BhwCqf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    All,
    Csv,
    Json,
    Text,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::All => ReportFormat::All,
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
            Format::Text => ReportFormat::Text,
        }
    }
}

enum Outcome {
    Done,
    NotConverged,
}

#[derive(Serialize)]
struct Diagnosis<'a> {
    projects: &'a [String],
    pool: f64,
    qf_targets: allocation::QfTargets,
    allocation: allocation::AllocationResult,
    diagnostics: DiagnosticsRecord,
}

fn run(command: Command) -> qf_pool::Result<Outcome> {
    match command {
        Command::Allocate {
            ledger,
            pool,
            rule,
            out,
        } => {
            let labeled = load_ledger(&ledger)?;
            let pool = MatchingPool::new(pool)?;
            let result = match rule {
                Rule::Capped => allocate_capped(&labeled.ledger, pool),
                Rule::BhwCqf => allocate_bhw_cqf(&labeled.ledger, pool),
            };
            let csv = allocations_csv(&labeled.projects, &qf_target(&labeled.ledger), &result);
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
                    let path = dir.join("allocations.csv");
                    std::fs::write(&path, csv).map_err(|e| io_err(&path, e))?;
                }
                None => print!("{csv}"),
            }
            Ok(Outcome::Done)
        }
        Command::Simulate {
            scenario,
            out,
            format,
        } => {
            let scenario = load_scenario(&scenario)?;
            let report = run_round(&scenario, 0, scenario.config.pool_per_round[0])?;
            emit_round(&scenario, &report, &out, format.into())?;
            Ok(if report.converged {
                Outcome::Done
            } else {
                Outcome::NotConverged
            })
        }
        Command::Diagnose {
            ledger,
            pool,
            scenario,
        } => {
            let scenario = load_scenario(&scenario)?;
            let labeled =
                load_ledger_with_ids(&ledger, &scenario.config.contributors, &scenario.config.projects)?;
            let pool = MatchingPool::new(pool)?;
            let diagnosis = Diagnosis {
                projects: &scenario.config.projects,
                pool: pool.amount(),
                qf_targets: qf_target(&labeled.ledger),
                allocation: allocate_capped(&labeled.ledger, pool),
                diagnostics: diagnostics(&scenario.utility, &labeled.ledger, pool)?,
            };
            println!("{}", to_json(&diagnosis));
            Ok(Outcome::Done)
        }
        Command::Rounds {
            scenario,
            out,
            format,
        } => {
            let scenario = load_scenario(&scenario)?;
            let reports = run_rounds(&scenario)?;
            emit_rounds(&scenario, &reports, &out, format.into())?;
            Ok(if reports.iter().all(|r| r.converged) {
                Outcome::Done
            } else {
                Outcome::NotConverged
            })
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("qf-pool: dynamics did not converge; reports were written");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("qf-pool: {e}");
            ExitCode::from(match e {
                Error::Io { .. } => 1,
                Error::NonConvergence(_) => 3,
                _ => 2,
            })
        }
    }
}
