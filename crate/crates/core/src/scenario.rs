//! Scenario files.
//!
//! A scenario is TOML (or JSON, picked by the `.json` extension) describing
//! the population, valuations, per-round external donations and solver
//! settings:
//!
//! ```toml
//! projects = ["docs", "tooling"]
//! contributors = ["ana", "ben", "chen"]
//! pool_per_round = [10.0, 10.0, 10.0]
//! n_rounds = 3
//!
//! [utility]
//! family = "log1p"              # "sqrt", "log1p" or "power" (needs `exponent`)
//! weights = [[3.0, 1.0], [1.0, 2.0], [2.0, 2.0]]
//! # uniform_weight = 2.0        # instead of `weights`
//!
//! # initial_ledger = [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]
//!
//! [dynamics]
//! sweep_order = "gauss-seidel"  # or "jacobi"
//! max_sweeps = 500
//! ledger_tol = 1e-9
//! damping = 0.5
//! seed = 0
//! shuffle = false
//!
//! [best_response]
//! max_iters = 500
//! step_tol = 1e-10
//! grad_tol = 1e-8
//! damping = 1.0
//! # upper_bound = 1000.0
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::BestResponseConfig;
use crate::allocation::ContributionLedger;
use crate::equilibrium::DynamicsConfig;
use crate::error::{Error, Result};
use crate::preferences::{UtilityFamily, UtilitySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityConfig {
    #[serde(flatten)]
    pub family: UtilityFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub projects: Vec<String>,
    pub contributors: Vec<String>,
    pub utility: UtilityConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_ledger: Option<Vec<Vec<f64>>>,
    pub pool_per_round: Vec<f64>,
    pub n_rounds: usize,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub best_response: BestResponseConfig,
}

/// A validated scenario with its matrices built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub utility: UtilitySpec,
    pub initial_ledger: ContributionLedger,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build(self) -> Result<Scenario> {
        check_ids("projects", &self.projects)?;
        check_ids("contributors", &self.contributors)?;
        if self.n_rounds == 0 {
            return Err(Error::Config("n_rounds must be >= 1".into()));
        }
        if self.pool_per_round.len() != self.n_rounds {
            return Err(Error::Config(format!(
                "pool_per_round has {} entries but n_rounds is {}",
                self.pool_per_round.len(),
                self.n_rounds
            )));
        }
        if let Some(bad) = self
            .pool_per_round
            .iter()
            .find(|d| !(d.is_finite() && **d >= 0.0))
        {
            return Err(Error::Config(format!(
                "pool_per_round entries must be finite and nonnegative, got {bad}"
            )));
        }
        self.dynamics.validate()?;
        self.best_response.validate()?;

        let (n, m) = (self.contributors.len(), self.projects.len());
        let utility = match (&self.utility.weights, self.utility.uniform_weight) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "utility: give either `weights` or `uniform_weight`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "utility: one of `weights` or `uniform_weight` is required".into(),
                ))
            }
            (Some(w), None) => {
                check_shape("utility.weights", w, n, m)?;
                UtilitySpec::new(self.utility.family, w)?
            }
            (None, Some(w)) => UtilitySpec::uniform(self.utility.family, n, m, w)?,
        };
        let initial_ledger = match &self.initial_ledger {
            Some(rows) => {
                check_shape("initial_ledger", rows, n, m)?;
                ContributionLedger::from_rows(rows)?
            }
            None => ContributionLedger::zeros(n, m)?,
        };
        Ok(Scenario {
            config: self,
            utility,
            initial_ledger,
        })
    }
}

fn check_ids(what: &str, ids: &[String]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Config(format!("{what} must not be empty")));
    }
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Config(format!("duplicate id {id:?} in {what}")));
        }
    }
    Ok(())
}

fn check_shape(what: &str, rows: &[Vec<f64>], n: usize, m: usize) -> Result<()> {
    if rows.len() != n || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!(
            "{what} must be {n} rows of {m} entries (contributors x projects)"
        )));
    }
    Ok(())
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        ScenarioConfig::from_json_str(&text)
    } else {
        ScenarioConfig::from_toml_str(&text)
    };
    parsed.and_then(ScenarioConfig::build).map_err(|e| match e {
        Error::Config(message) => Error::Scenario {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}
