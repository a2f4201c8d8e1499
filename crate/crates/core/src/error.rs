use std::path::PathBuf;

use crate::agent::NonConvergence;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("ledger entry (contributor {contributor}, project {project}) is {value}; amounts must be finite and nonnegative")]
    InvalidEntry {
        contributor: usize,
        project: usize,
        value: f64,
    },

    #[error("ledger must have at least one contributor and one project (got {contributors}x{projects})")]
    EmptyLedger { contributors: usize, projects: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matching pool must be finite and nonnegative, got {0}")]
    InvalidPool(f64),

    #[error("undefined reallocation cost: matching pool is zero")]
    UndefinedReallocationCost,

    #[error("utility weight (contributor {contributor}, project {project}) is {value}; weights must be finite and nonnegative")]
    InvalidWeight {
        contributor: usize,
        project: usize,
        value: f64,
    },

    #[error("power utility exponent must lie in (0, 1), got {0}")]
    InvalidExponent(f64),

    #[error("funding level must be finite and nonnegative, got {0}")]
    NegativeFunding(f64),

    #[error("unbounded marginal at zero (contributor {contributor}, project {project})")]
    UnboundedMarginal { contributor: usize, project: usize },

    #[error("contributor index {0} out of range")]
    ContributorIndex(usize),

    #[error("project index {0} out of range")]
    ProjectIndex(usize),

    #[error("candidate contribution for project {project} is {value}; must be finite and nonnegative")]
    InvalidCandidate { project: usize, value: f64 },

    #[error("corner point: contribution (contributor {contributor}, project {project}) is zero; use objective_gradient")]
    CornerPoint { contributor: usize, project: usize },

    #[error("first-order condition requires the capped regime (targets {targets} <= pool {pool})")]
    NotCapped { targets: f64, pool: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("best response did not converge: {0}")]
    NonConvergence(Box<NonConvergence>),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("scenario {path}: {message}")]
    Scenario { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
