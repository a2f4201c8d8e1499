//! Contribution ledgers as `contributor_id,project_id,amount` CSV.
//!
//! Duplicate `(contributor, project)` rows are summed and missing pairs are
//! zero. Line numbers in errors are 1-based and count the header.

use std::collections::HashMap;
use std::path::Path;

use crate::allocation::ContributionLedger;
use crate::error::{Error, Result};
use crate::report::fmt_num;

pub const LEDGER_HEADER: [&str; 3] = ["contributor_id", "project_id", "amount"];

/// A ledger together with the ids of its rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLedger {
    pub contributors: Vec<String>,
    pub projects: Vec<String>,
    pub ledger: ContributionLedger,
}

struct Row {
    line: u64,
    contributor: String,
    project: String,
    amount: f64,
}

fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut rows = Vec::new();
    let mut saw_header = false;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if !saw_header {
            if record.iter().ne(LEDGER_HEADER) {
                return Err(parse_err(
                    line,
                    format!("expected header `{}`", LEDGER_HEADER.join(",")),
                ));
            }
            saw_header = true;
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(parse_err(
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let (contributor, project, amount) = (&record[0], &record[1], &record[2]);
        if contributor.is_empty() || project.is_empty() {
            return Err(parse_err(line, "empty contributor or project id".into()));
        }
        let amount: f64 = amount
            .parse()
            .map_err(|_| parse_err(line, format!("invalid amount {amount:?}")))?;
        if !(amount.is_finite() && amount >= 0.0) {
            return Err(parse_err(
                line,
                format!("amount must be finite and nonnegative, got {amount}"),
            ));
        }
        rows.push(Row {
            line,
            contributor: contributor.to_string(),
            project: project.to_string(),
            amount,
        });
    }
    if !saw_header {
        return Err(parse_err(1, "empty file".into()));
    }
    Ok(rows)
}

fn index_of(ids: &mut Vec<String>, lookup: &mut HashMap<String, usize>, id: &str) -> usize {
    *lookup.entry(id.to_string()).or_insert_with(|| {
        ids.push(id.to_string());
        ids.len() - 1
    })
}

fn assemble(
    rows: &[Row],
    positions: &[(usize, usize)],
    contributors: Vec<String>,
    projects: Vec<String>,
) -> Result<LabeledLedger> {
    let mut ledger = ContributionLedger::zeros(contributors.len(), projects.len())?;
    for (row, &(i, p)) in rows.iter().zip(positions) {
        ledger.set(i, p, ledger.get(i, p) + row.amount)?;
    }
    Ok(LabeledLedger {
        contributors,
        projects,
        ledger,
    })
}

/// Loads a ledger, numbering contributors and projects by first appearance.
pub fn load_ledger(path: impl AsRef<Path>) -> Result<LabeledLedger> {
    let path = path.as_ref();
    let rows = read_rows(path)?;
    let (mut contributors, mut projects) = (Vec::new(), Vec::new());
    let (mut c_lookup, mut p_lookup) = (HashMap::new(), HashMap::new());
    let mut positions = Vec::with_capacity(rows.len());
    for row in &rows {
        positions.push((
            index_of(&mut contributors, &mut c_lookup, &row.contributor),
            index_of(&mut projects, &mut p_lookup, &row.project),
        ));
    }
    if rows.is_empty() {
        return Err(Error::EmptyLedger {
            contributors: 0,
            projects: 0,
        });
    }
    assemble(&rows, &positions, contributors, projects)
}

/// Loads a ledger against fixed id lists (for example a scenario's).
/// Unknown ids are errors.
pub fn load_ledger_with_ids(
    path: impl AsRef<Path>,
    contributors: &[String],
    projects: &[String],
) -> Result<LabeledLedger> {
    let path = path.as_ref();
    let rows = read_rows(path)?;
    let c_lookup: HashMap<&str, usize> = contributors
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let p_lookup: HashMap<&str, usize> = projects
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let positions = rows
        .iter()
        .map(|row| {
            let unknown = |kind: &str, id: &str| Error::Parse {
                path: path.to_path_buf(),
                line: row.line,
                message: format!("unknown {kind} id {id:?}"),
            };
            let i = *c_lookup
                .get(row.contributor.as_str())
                .ok_or_else(|| unknown("contributor", &row.contributor))?;
            let p = *p_lookup
                .get(row.project.as_str())
                .ok_or_else(|| unknown("project", &row.project))?;
            Ok((i, p))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(&rows, &positions, contributors.to_vec(), projects.to_vec())
}

/// Writes every `(contributor, project)` pair, zeros included, row-major.
pub fn write_ledger(path: impl AsRef<Path>, labeled: &LabeledLedger) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("contributor_id,project_id,amount\n");
    for (i, c) in labeled.contributors.iter().enumerate() {
        for (p, proj) in labeled.projects.iter().enumerate() {
            out.push_str(&format!("{c},{proj},{}\n", fmt_num(labeled.ledger.get(i, p))));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
