//! Iterated best-response dynamics and equilibrium diagnostics.
//!
//! Diagnostics evaluate the summed first-order condition at a ledger:
//!
//! ```text
//! smbₚ − Σ_q (t_q/T)·smb_q − T/D
//! ```
//!
//! where `smbₚ = Σᵢ V′ᵢᵖ(Fᵖ)`. The middle term is the target-weighted average
//! of social marginal benefits and `T/D` is the reallocation cost. Since the
//! target-weighted mean of `smbₚ − avg` is zero by construction, the
//! target-weighted mean of these residuals is always exactly `−T/D`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{best_response, contributor_objective, BestResponseConfig};
use crate::allocation::{
    allocate_capped_targets, qf_target, reallocation_cost, AllocationResult, ContributionLedger,
    MatchingPool, Regime,
};
use crate::error::{Error, Result};
use crate::preferences::UtilitySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepOrder {
    /// Contributors update one after another, each seeing earlier updates.
    GaussSeidel,
    /// Every contributor replies to the same snapshot; rows are applied together.
    Jacobi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub sweep_order: SweepOrder,
    pub max_sweeps: usize,
    /// Sup-norm ledger change below which a sweep counts as converged.
    pub ledger_tol: f64,
    /// Fraction of the way each row moves toward its best reply. A damped
    /// row that would lower the mover's payoff is replaced by the full reply.
    pub damping: f64,
    pub seed: u64,
    /// Visit contributors in a fresh seeded permutation every sweep.
    pub shuffle: bool,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            sweep_order: SweepOrder::GaussSeidel,
            max_sweeps: 500,
            ledger_tol: 1e-9,
            damping: 0.5,
            seed: 0,
            shuffle: false,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::Config("dynamics.max_sweeps must be >= 1".into()));
        }
        if !(self.ledger_tol > 0.0) {
            return Err(Error::Config("dynamics.ledger_tol must be > 0".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config("dynamics.damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub regime: Regime,
    /// Σᵢ V′ᵢᵖ at the funded level. `None` where a project is unfunded and
    /// its marginal is singular at zero.
    pub smb: Vec<Option<f64>>,
    pub weighted_avg_smb: f64,
    pub realloc_cost: f64,
    pub eq2_residuals: Vec<Option<f64>>,
    /// max − min of `smb` over funded projects.
    pub smb_dispersion: f64,
    /// Every ledger entry strictly positive.
    pub interior: bool,
}

impl DiagnosticsRecord {
    pub fn max_abs_eq2_residual(&self) -> f64 {
        self.eq2_residuals
            .iter()
            .flatten()
            .fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Mean of `smb` over funded projects.
    pub fn mean_funded_smb(&self, funded: &[f64]) -> f64 {
        let values: Vec<f64> = funded
            .iter()
            .zip(&self.smb)
            .filter(|(f, _)| **f > 0.0)
            .filter_map(|(_, s)| *s)
            .collect();
        if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    }
}

pub fn diagnostics(
    spec: &UtilitySpec,
    ledger: &ContributionLedger,
    pool: MatchingPool,
) -> Result<DiagnosticsRecord> {
    if spec.n_contributors() != ledger.n_contributors() || spec.n_projects() != ledger.n_projects()
    {
        return Err(Error::Shape(format!(
            "utility spec is {}x{}, ledger is {}x{}",
            spec.n_contributors(),
            spec.n_projects(),
            ledger.n_contributors(),
            ledger.n_projects()
        )));
    }
    let targets = qf_target(ledger);
    let realloc_cost = reallocation_cost(&targets, pool)?;
    let allocation = allocate_capped_targets(&targets, pool);
    let funded = &allocation.funded;

    let singular = spec.family().singular_at_zero();
    let mut smb = Vec::with_capacity(funded.len());
    for (p, &f) in funded.iter().enumerate() {
        if f == 0.0 && singular && spec.anyone_cares(p) {
            smb.push(None);
        } else {
            let mut sum = 0.0;
            for i in 0..spec.n_contributors() {
                sum += spec.utility_marginal(i, p, f)?;
            }
            smb.push(Some(sum));
        }
    }

    let weighted_avg_smb = if targets.total > 0.0 {
        targets
            .per_project
            .iter()
            .zip(&smb)
            .filter(|(t, _)| **t > 0.0)
            .map(|(t, s)| (t / targets.total) * s.expect("positive target implies funded"))
            .sum()
    } else {
        let defined: Vec<f64> = smb.iter().flatten().copied().collect();
        if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    };

    let eq2_residuals = smb
        .iter()
        .map(|s| s.map(|s| s - weighted_avg_smb - realloc_cost))
        .collect();

    let funded_smb = funded
        .iter()
        .zip(&smb)
        .filter(|(f, _)| **f > 0.0)
        .filter_map(|(_, s)| *s);
    let (lo, hi) = funded_smb.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s), hi.max(s))
    });
    let smb_dispersion = if hi >= lo { hi - lo } else { 0.0 };

    Ok(DiagnosticsRecord {
        regime: allocation.regime,
        smb,
        weighted_avg_smb,
        realloc_cost,
        eq2_residuals,
        smb_dispersion,
        interior: ledger.is_interior(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryState {
    /// 0 for the initial ledger, then one per sweep.
    pub sweep: usize,
    pub ledger: ContributionLedger,
    pub allocation: AllocationResult,
    /// `None` only when the pool is zero.
    pub diagnostics: Option<DiagnosticsRecord>,
    /// Sup-norm change from the previous state.
    pub max_change: f64,
    /// Contributors whose best response hit its iteration limit this sweep.
    /// Their best iterate was used.
    pub failed_contributors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub states: Vec<TrajectoryState>,
    pub converged: bool,
    pub sweeps_used: usize,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn final_ledger(&self) -> &ContributionLedger {
        &self.last().ledger
    }
}

fn record(
    spec: &UtilitySpec,
    ledger: &ContributionLedger,
    pool: MatchingPool,
    sweep: usize,
    max_change: f64,
    failed_contributors: Vec<usize>,
) -> Result<TrajectoryState> {
    let allocation = allocate_capped_targets(&qf_target(ledger), pool);
    let diagnostics = if pool.amount() > 0.0 {
        Some(diagnostics(spec, ledger, pool)?)
    } else {
        None
    };
    Ok(TrajectoryState {
        sweep,
        ledger: ledger.clone(),
        allocation,
        diagnostics,
        max_change,
        failed_contributors,
    })
}

/// Best reply for contributor `i`, falling back to the best iterate when
/// the solver runs out of iterations. The flag is true on fallback.
fn reply(
    spec: &UtilitySpec,
    ledger: &ContributionLedger,
    pool: MatchingPool,
    i: usize,
    br: &BestResponseConfig,
) -> Result<(Vec<f64>, bool)> {
    match best_response(spec, ledger, pool, i, br) {
        Ok(row) => Ok((row, false)),
        Err(Error::NonConvergence(nc)) => Ok((nc.best_iterate, true)),
        Err(e) => Err(e),
    }
}

/// The damped step toward `reply`, or `reply` itself when the damped row
/// would leave contributor `i` worse off than staying put.
fn damped(
    spec: &UtilitySpec,
    ledger: &ContributionLedger,
    pool: MatchingPool,
    i: usize,
    reply: Vec<f64>,
    damping: f64,
) -> Result<Vec<f64>> {
    if damping == 1.0 {
        return Ok(reply);
    }
    let current = ledger.row(i);
    let step: Vec<f64> = current
        .iter()
        .zip(&reply)
        .map(|(c, r)| (damping * r + (1.0 - damping) * c).max(0.0))
        .collect();
    let stay = contributor_objective(spec, ledger, pool, i, current)?;
    let moved = contributor_objective(spec, ledger, pool, i, &step)?;
    Ok(if moved >= stay { step } else { reply })
}

/// Runs best-response sweeps from `initial` until the ledger stops moving.
///
/// Every sweep is recorded. A sweep in which some contributor's best
/// response failed to converge never counts as converged.
pub fn run_dynamics(
    spec: &UtilitySpec,
    initial: &ContributionLedger,
    pool: MatchingPool,
    dynamics: &DynamicsConfig,
    br: &BestResponseConfig,
) -> Result<Trajectory> {
    dynamics.validate()?;
    br.validate()?;
    let n = initial.n_contributors();
    let mut rng = ChaCha8Rng::seed_from_u64(dynamics.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut ledger = initial.clone();
    let mut states = vec![record(spec, &ledger, pool, 0, 0.0, Vec::new())?];
    let mut converged = false;
    let mut sweeps_used = 0;

    for sweep in 1..=dynamics.max_sweeps {
        sweeps_used = sweep;
        let previous = ledger.clone();
        let mut failed = Vec::new();
        if dynamics.shuffle {
            order.shuffle(&mut rng);
        }
        match dynamics.sweep_order {
            SweepOrder::GaussSeidel => {
                for &i in &order {
                    let (row, fallback) = reply(spec, &ledger, pool, i, br)?;
                    if fallback {
                        failed.push(i);
                    }
                    let next = damped(spec, &ledger, pool, i, row, dynamics.damping)?;
                    ledger.set_row(i, &next)?;
                }
            }
            SweepOrder::Jacobi => {
                let snapshot = &previous;
                let replies: Vec<(Vec<f64>, bool)> = (0..n)
                    .into_par_iter()
                    .map(|i| reply(spec, snapshot, pool, i, br))
                    .collect::<Result<_>>()?;
                for (i, (row, fallback)) in replies.into_iter().enumerate() {
                    if fallback {
                        failed.push(i);
                    }
                    let next = damped(spec, snapshot, pool, i, row, dynamics.damping)?;
                    ledger.set_row(i, &next)?;
                }
            }
        }
        failed.sort_unstable();
        let change = ledger.max_abs_diff(&previous);
        let clean = failed.is_empty();
        states.push(record(spec, &ledger, pool, sweep, change, failed)?);
        if clean && change <= dynamics.ledger_tol {
            converged = true;
            break;
        }
    }

    Ok(Trajectory {
        states,
        converged,
        sweeps_used,
    })
}

/// `smb_dispersion` of every recorded state, in order. States without
/// diagnostics (zero pool) have nothing funded and report 0.
pub fn dispersion_series(trajectory: &Trajectory) -> Vec<f64> {
    trajectory
        .states
        .iter()
        .map(|s| s.diagnostics.as_ref().map_or(0.0, |d| d.smb_dispersion))
        .collect()
}
