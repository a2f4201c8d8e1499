//! Report files.
//!
//! For one round, a directory receives:
//!
//! * `summary.txt`: human-readable overview
//! * `allocations.csv`: `project_id,qf_target,funded,share`
//! * `diagnostics.csv`: one row per sweep,
//!   `sweep,realloc_cost,smb_<project>...,dispersion`
//! * `round_report.json`: the full round report
//! * `ledger.csv`: the final ledger in the input ledger format
//!
//! Multi-round output puts each round in `round_<k>/` and adds a top-level
//! `summary.txt` with the money balance. Numbers in every file are written
//! with 17 significant digits, so they parse back to the same `f64`.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::allocation::{AllocationResult, QfTargets};
use crate::equilibrium::Trajectory;
use crate::error::{Error, Result};
use crate::ledger_csv::{write_ledger, LabeledLedger};
use crate::rounds::{MoneyBalance, RoundReport};
use crate::scenario::Scenario;

use serde_json::ser::{Formatter, PrettyFormatter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    All,
    Csv,
    Json,
    Text,
}

impl ReportFormat {
    fn csv(self) -> bool {
        matches!(self, ReportFormat::All | ReportFormat::Csv)
    }
    fn json(self) -> bool {
        matches!(self, ReportFormat::All | ReportFormat::Json)
    }
    fn text(self) -> bool {
        matches!(self, ReportFormat::All | ReportFormat::Text)
    }
}

/// 17 significant digits, scientific notation, `.` decimal separator.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Pretty-printed JSON whose floats use [`fmt_num`].
pub fn to_json<T: serde::Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("report serializes");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

struct Digits17<'a>(PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {$(
        fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        }
    )*};
}

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_num(value).as_bytes())
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }
    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        end_object_key();
        begin_object_value();
        end_object_value();
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn allocations_csv(projects: &[String], targets: &QfTargets, allocation: &AllocationResult) -> String {
    let mut out = String::from("project_id,qf_target,funded,share\n");
    let total = allocation.delivered_total;
    for (p, id) in projects.iter().enumerate() {
        let funded = allocation.funded[p];
        let share = if total > 0.0 { funded / total } else { 0.0 };
        let _ = writeln!(
            out,
            "{id},{},{},{}",
            fmt_num(targets.per_project[p]),
            fmt_num(funded),
            fmt_num(share)
        );
    }
    out
}

pub fn diagnostics_csv(projects: &[String], trajectory: &Trajectory) -> String {
    let mut out = String::from("sweep,realloc_cost");
    for id in projects {
        let _ = write!(out, ",smb_{id}");
    }
    out.push_str(",dispersion\n");
    for state in &trajectory.states {
        let _ = write!(out, "{}", state.sweep);
        match &state.diagnostics {
            Some(d) => {
                let _ = write!(out, ",{}", fmt_num(d.realloc_cost));
                for s in &d.smb {
                    let _ = write!(out, ",{}", fmt_opt(*s));
                }
                let _ = writeln!(out, ",{}", fmt_num(d.smb_dispersion));
            }
            None => {
                out.push(',');
                for _ in projects {
                    out.push(',');
                }
                let _ = writeln!(out, ",{}", fmt_num(0.0));
            }
        }
    }
    out
}

fn round_summary(scenario: &Scenario, report: &RoundReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "round {}", report.round_index);
    let _ = writeln!(out, "  external donation        {}", fmt_num(report.external_donation));
    let _ = writeln!(out, "  pool used                {}", fmt_num(report.pool_used));
    let _ = writeln!(out, "  regime                   {:?}", report.allocation.regime);
    let _ = writeln!(out, "  qf target total          {}", fmt_num(report.qf_targets.total));
    let _ = writeln!(out, "  distributed              {}", fmt_num(report.distributed));
    let _ = writeln!(out, "  undistributed remainder  {}", fmt_num(report.undistributed_remainder));
    let _ = writeln!(out, "  contributions collected  {}", fmt_num(report.contributions_collected));
    let _ = writeln!(out, "  carryover to next        {}", fmt_num(report.carryover_to_next));
    let _ = writeln!(
        out,
        "  dynamics                 {} after {} sweeps",
        if report.converged { "converged" } else { "NOT converged" },
        report.sweeps_used
    );
    if let Some(d) = &report.diagnostics {
        let _ = writeln!(out, "  reallocation cost        {}", fmt_num(d.realloc_cost));
        let _ = writeln!(out, "  smb dispersion           {}", fmt_num(d.smb_dispersion));
        let _ = writeln!(out, "  interior                 {}", d.interior);
    }
    let _ = writeln!(out, "  projects");
    for (p, id) in scenario.config.projects.iter().enumerate() {
        let _ = writeln!(
            out,
            "    {id:<20} target {}  funded {}",
            fmt_num(report.qf_targets.per_project[p]),
            fmt_num(report.allocation.funded[p])
        );
    }
    out
}

/// Writes one round's files into `dir`, creating it if needed.
pub fn emit_round(
    scenario: &Scenario,
    report: &RoundReport,
    dir: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let projects = &scenario.config.projects;
    if format.text() {
        write(&dir.join("summary.txt"), &round_summary(scenario, report))?;
    }
    if format.csv() {
        write(
            &dir.join("allocations.csv"),
            &allocations_csv(projects, &report.qf_targets, &report.allocation),
        )?;
        write(
            &dir.join("diagnostics.csv"),
            &diagnostics_csv(projects, &report.trajectory),
        )?;
        write_ledger(
            dir.join("ledger.csv"),
            &LabeledLedger {
                contributors: scenario.config.contributors.clone(),
                projects: projects.clone(),
                ledger: report.final_ledger.clone(),
            },
        )?;
    }
    if format.json() {
        write(&dir.join("round_report.json"), &(to_json(report) + "\n"))?;
    }
    Ok(())
}

/// Writes every round into `dir/round_<k>/` plus a top-level summary.
pub fn emit_rounds(
    scenario: &Scenario,
    reports: &[RoundReport],
    dir: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for report in reports {
        emit_round(
            scenario,
            report,
            dir.join(format!("round_{}", report.round_index)),
            format,
        )?;
    }
    if format.text() {
        let balance = MoneyBalance::of(reports);
        let mut out = String::new();
        let _ = writeln!(out, "rounds                   {}", reports.len());
        let _ = writeln!(out, "external donations       {}", fmt_num(balance.external_donations));
        let _ = writeln!(out, "contributions collected  {}", fmt_num(balance.contributions_collected));
        let _ = writeln!(out, "distributed              {}", fmt_num(balance.distributed));
        let _ = writeln!(out, "terminal carryover       {}", fmt_num(balance.terminal_carryover));
        let _ = writeln!(out, "imbalance                {}", fmt_num(balance.imbalance()));
        out.push('\n');
        for report in reports {
            out.push_str(&round_summary(scenario, report));
        }
        write(&dir.join("summary.txt"), &out)?;
    }
    Ok(())
}
