//! Matching-pool allocation rules.
//!
//! Three pure functions sit here:
//!
//! * [`qf_target`]: the unconstrained quadratic funding target of every
//!   project, `(Σᵢ √cᵢᵖ)²`.
//! * [`allocate_capped`]: the capped-proportional rule. If the targets fit in
//!   the pool each project receives its target; otherwise the pool `D` is
//!   split in proportion to the targets. Contributions are never passed
//!   through to projects; the mechanism keeps them.
//! * [`allocate_bhw_cqf`]: the classic capital-constrained rule, a linear
//!   combination `α·target + (1−α)·contributions` with the largest `α` whose
//!   matching spend fits in the pool. Used as a baseline.

use serde::Serialize;

use crate::error::{Error, Result};

/// Nonnegative contribution amounts, contributors × projects.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContributionLedger {
    n_contributors: usize,
    n_projects: usize,
    /// Row-major: entry `(i, p)` lives at `i * n_projects + p`.
    amounts: Vec<f64>,
}

impl ContributionLedger {
    pub fn zeros(n_contributors: usize, n_projects: usize) -> Result<Self> {
        if n_contributors == 0 || n_projects == 0 {
            return Err(Error::EmptyLedger {
                contributors: n_contributors,
                projects: n_projects,
            });
        }
        Ok(Self {
            n_contributors,
            n_projects,
            amounts: vec![0.0; n_contributors * n_projects],
        })
    }

    /// Builds a ledger from one row per contributor.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_projects = rows.first().map_or(0, |r| r.as_ref().len());
        let mut ledger = Self::zeros(rows.len(), n_projects)?;
        for (i, row) in rows.iter().enumerate() {
            ledger.set_row(i, row.as_ref())?;
        }
        Ok(ledger)
    }

    pub fn n_contributors(&self) -> usize {
        self.n_contributors
    }

    pub fn n_projects(&self) -> usize {
        self.n_projects
    }

    pub fn get(&self, contributor: usize, project: usize) -> f64 {
        self.amounts[contributor * self.n_projects + project]
    }

    pub fn row(&self, contributor: usize) -> &[f64] {
        let start = contributor * self.n_projects;
        &self.amounts[start..start + self.n_projects]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.amounts.chunks_exact(self.n_projects)
    }

    /// Replaces contributor `i`'s row after validating every entry.
    pub fn set_row(&mut self, contributor: usize, row: &[f64]) -> Result<()> {
        if contributor >= self.n_contributors {
            return Err(Error::ContributorIndex(contributor));
        }
        if row.len() != self.n_projects {
            return Err(Error::Shape(format!(
                "row for contributor {contributor} has {} entries, ledger has {} projects",
                row.len(),
                self.n_projects
            )));
        }
        for (project, &value) in row.iter().enumerate() {
            check_amount(contributor, project, value)?;
        }
        let start = contributor * self.n_projects;
        self.amounts[start..start + self.n_projects].copy_from_slice(row);
        Ok(())
    }

    pub fn set(&mut self, contributor: usize, project: usize, value: f64) -> Result<()> {
        if contributor >= self.n_contributors {
            return Err(Error::ContributorIndex(contributor));
        }
        if project >= self.n_projects {
            return Err(Error::ProjectIndex(project));
        }
        check_amount(contributor, project, value)?;
        self.amounts[contributor * self.n_projects + project] = value;
        Ok(())
    }

    /// Σᵢ cᵢᵖ for each project.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_projects];
        for row in self.rows() {
            for (s, c) in sums.iter_mut().zip(row) {
                *s += c;
            }
        }
        sums
    }

    pub fn total(&self) -> f64 {
        self.amounts.iter().sum()
    }

    /// Largest absolute entrywise difference to another ledger of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.amounts
            .iter()
            .zip(&other.amounts)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// True when every entry is strictly positive.
    pub fn is_interior(&self) -> bool {
        self.amounts.iter().all(|&c| c > 0.0)
    }
}

fn check_amount(contributor: usize, project: usize, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidEntry {
            contributor,
            project,
            value,
        })
    }
}

/// The donor pool `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MatchingPool(f64);

impl MatchingPool {
    pub fn new(amount: f64) -> Result<Self> {
        if amount.is_finite() && amount >= 0.0 {
            Ok(Self(amount))
        } else {
            Err(Error::InvalidPool(amount))
        }
    }

    pub fn amount(self) -> f64 {
        self.0
    }
}

/// Per-project quadratic funding targets and their sum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QfTargets {
    pub per_project: Vec<f64>,
    pub total: f64,
}

impl QfTargets {
    fn from_per_project(per_project: Vec<f64>) -> Self {
        let total = per_project.iter().sum();
        Self { per_project, total }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    Unconstrained,
    Capped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationResult {
    pub funded: Vec<f64>,
    pub regime: Regime,
    /// Σₚ funded.
    pub delivered_total: f64,
    /// Pool money spent. Equals `delivered_total` for the capped rule; for
    /// the CQF baseline it excludes the pass-through contributions.
    pub matching_spend: f64,
    /// Mixing weight, set only by [`allocate_bhw_cqf`].
    pub alpha: Option<f64>,
}

/// Column sums of square roots, `Σᵢ √cᵢᵖ`, for each project.
pub fn sqrt_column_sums(ledger: &ContributionLedger) -> Vec<f64> {
    let mut sums = vec![0.0; ledger.n_projects()];
    for row in ledger.rows() {
        for (s, c) in sums.iter_mut().zip(row) {
            *s += c.sqrt();
        }
    }
    sums
}

pub fn qf_target(ledger: &ContributionLedger) -> QfTargets {
    let per_project = sqrt_column_sums(ledger)
        .into_iter()
        .map(|s| s * s)
        .collect();
    QfTargets::from_per_project(per_project)
}

pub fn allocate_capped(ledger: &ContributionLedger, pool: MatchingPool) -> AllocationResult {
    allocate_capped_targets(&qf_target(ledger), pool)
}

/// Capped-proportional allocation from precomputed targets.
///
/// With no preference signal at all (every target zero) nothing is funded and
/// the whole pool stays with the mechanism.
pub fn allocate_capped_targets(targets: &QfTargets, pool: MatchingPool) -> AllocationResult {
    let d = pool.amount();
    let total = targets.total;
    if total == 0.0 {
        return AllocationResult {
            funded: vec![0.0; targets.per_project.len()],
            regime: Regime::Capped,
            delivered_total: 0.0,
            matching_spend: 0.0,
            alpha: None,
        };
    }
    if total <= d {
        return AllocationResult {
            funded: targets.per_project.clone(),
            regime: Regime::Unconstrained,
            delivered_total: total,
            matching_spend: total,
            alpha: None,
        };
    }
    let funded: Vec<f64> = targets
        .per_project
        .iter()
        .map(|&t| d * (t / total))
        .collect();
    let delivered_total = funded.iter().sum();
    AllocationResult {
        funded,
        regime: Regime::Capped,
        delivered_total,
        matching_spend: delivered_total,
        alpha: None,
    }
}

/// Linear-combination CQF baseline.
///
/// Matching spend is `α·Σₚ(targetₚ − contributedₚ)`, linear in `α`, so the
/// binding `α` is `D / Σₚ(targetₚ − contributedₚ)` clipped to 1.
pub fn allocate_bhw_cqf(ledger: &ContributionLedger, pool: MatchingPool) -> AllocationResult {
    let targets = qf_target(ledger);
    let contributed = ledger.column_sums();
    // (Σ√c)² ≥ Σc, up to rounding.
    let gap: f64 = targets
        .per_project
        .iter()
        .zip(&contributed)
        .map(|(t, s)| (t - s).max(0.0))
        .sum();
    let d = pool.amount();
    let (alpha, regime) = if gap <= d {
        (1.0, Regime::Unconstrained)
    } else {
        (d / gap, Regime::Capped)
    };
    let funded: Vec<f64> = targets
        .per_project
        .iter()
        .zip(&contributed)
        .map(|(&t, &s)| alpha * t + (1.0 - alpha) * s)
        .collect();
    let delivered_total: f64 = funded.iter().sum();
    let matching_spend = alpha * gap;
    AllocationResult {
        funded,
        regime,
        delivered_total,
        matching_spend,
        alpha: Some(alpha),
    }
}

/// `Σₚ F^{p,QF} / D`, the marginal price of steering the pool.
pub fn reallocation_cost(targets: &QfTargets, pool: MatchingPool) -> Result<f64> {
    if pool.amount() == 0.0 {
        return Err(Error::UndefinedReallocationCost);
    }
    Ok(targets.total / pool.amount())
}
