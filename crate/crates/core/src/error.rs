use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology ({} violation(s)): {}", .0.len(), list(.0))]
    InvalidTopology(Vec<Violation>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("utility domain violation: {0}")]
    UtilityDomain(String),

    /// The load iteration left every bounded region; the demand is infeasible.
    #[error("load iteration diverged after {iterations} iterations (max load {max_load:.3e})")]
    Diverged {
        iterations: usize,
        max_load: f64,
        load: Vec<f64>,
    },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("matrix is reducible")]
    Reducible,

    #[error("no positive allocation satisfies the demand caps: {0}")]
    InfeasibleCaps(String),

    #[error("no point of the ρ-grid keeps the maximum load at or below the cap")]
    NoQualifyingRho,

    #[error("oracle grid has {0} points, above the limit")]
    GridTooLarge(u128),

    #[error("cannot access {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file; the message names the line and column or field.
    #[error("cannot parse {}: {message}", .path.display())]
    Parse { path: PathBuf, message: String },

    #[error("{} has schema version {found}, expected {expected}", .path.display())]
    SchemaVersion {
        path: PathBuf,
        found: String,
        expected: u32,
    },
}

fn list(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
