//! Multi-round orchestration with rollover.
//!
//! Contributions are kept by the mechanism, never delivered to projects, and
//! join the next round's pool together with any pool money left undistributed.
//! Every round restarts from the scenario's initial ledger; only money carries
//! over, not commitments.

use serde::Serialize;

use crate::allocation::{
    allocate_capped_targets, qf_target, AllocationResult, ContributionLedger, MatchingPool,
    QfTargets,
};
use crate::equilibrium::{run_dynamics, DiagnosticsRecord, Trajectory};
use crate::error::{Error, Result};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    /// 1-based.
    pub round_index: usize,
    pub external_donation: f64,
    /// Pool `D` for this round: external donation plus rollover.
    pub pool_used: f64,
    pub qf_targets: QfTargets,
    pub allocation: AllocationResult,
    pub final_ledger: ContributionLedger,
    pub diagnostics: Option<DiagnosticsRecord>,
    pub contributions_collected: f64,
    /// Pool money paid to projects, `min(D, Σ targets)`.
    pub distributed: f64,
    pub undistributed_remainder: f64,
    /// Retained contributions handed to the next round.
    pub carryover_to_next: f64,
    pub converged: bool,
    pub sweeps_used: usize,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

/// Runs the dynamics for round `round` (0-based) with pool `incoming_pool`
/// and allocates at the final ledger.
pub fn run_round(scenario: &Scenario, round: usize, incoming_pool: f64) -> Result<RoundReport> {
    let external_donation = *scenario
        .config
        .pool_per_round
        .get(round)
        .ok_or_else(|| Error::Config(format!("scenario has no round {}", round + 1)))?;
    let pool = MatchingPool::new(incoming_pool)?;
    let trajectory = run_dynamics(
        &scenario.utility,
        &scenario.initial_ledger,
        pool,
        &scenario.config.dynamics,
        &scenario.config.best_response,
    )?;
    let final_ledger = trajectory.final_ledger().clone();
    let qf_targets = qf_target(&final_ledger);
    let allocation = allocate_capped_targets(&qf_targets, pool);
    let contributions_collected = final_ledger.total();
    let distributed = allocation.delivered_total;
    let undistributed_remainder = (incoming_pool - distributed).max(0.0);
    Ok(RoundReport {
        round_index: round + 1,
        external_donation,
        pool_used: incoming_pool,
        qf_targets,
        allocation,
        diagnostics: trajectory.last().diagnostics.clone(),
        final_ledger,
        contributions_collected,
        distributed,
        undistributed_remainder,
        carryover_to_next: contributions_collected,
        converged: trajectory.converged,
        sweeps_used: trajectory.sweeps_used,
        trajectory,
    })
}

/// Next round's pool: new donations plus everything the previous round kept.
pub fn rollover_pool(previous: &RoundReport, next_external: f64) -> f64 {
    next_external + previous.contributions_collected + previous.undistributed_remainder
}

pub fn run_rounds(scenario: &Scenario) -> Result<Vec<RoundReport>> {
    let externals = &scenario.config.pool_per_round;
    let mut reports: Vec<RoundReport> = Vec::with_capacity(externals.len());
    for (round, &external) in externals.iter().enumerate() {
        let pool = match reports.last() {
            Some(prev) => rollover_pool(prev, external),
            None => external,
        };
        reports.push(run_round(scenario, round, pool)?);
    }
    Ok(reports)
}

/// Money in versus money out over a sequence of rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoneyBalance {
    pub external_donations: f64,
    pub contributions_collected: f64,
    pub distributed: f64,
    /// What the last round hands on: its contributions plus its leftover pool.
    pub terminal_carryover: f64,
}

impl MoneyBalance {
    pub fn of(reports: &[RoundReport]) -> Self {
        let sum = |f: fn(&RoundReport) -> f64| reports.iter().map(f).sum::<f64>();
        Self {
            external_donations: sum(|r| r.external_donation),
            contributions_collected: sum(|r| r.contributions_collected),
            distributed: sum(|r| r.distributed),
            terminal_carryover: reports
                .last()
                .map_or(0.0, |r| r.carryover_to_next + r.undistributed_remainder),
        }
    }

    /// `(in) − (out)`; zero up to rounding.
    pub fn imbalance(&self) -> f64 {
        (self.external_donations + self.contributions_collected)
            - (self.distributed + self.terminal_carryover)
    }
}
