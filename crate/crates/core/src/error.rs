use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

/// Invalid argument to a rate or table evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("occupancy must be finite and nonnegative (x0 = {x0}, x1 = {x1})")]
    NegativeOccupancy { x0: f64, x1: f64 },
    #[error("rate table needs at least one knot")]
    EmptyTable,
    #[error("{0}")]
    BadTable(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {}", join(.0))]
    InvalidParams(Vec<Violation>),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("ODE step size underflow at t = {t} (h = {h}); system may be stiff")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("ODE integration exceeded {0} steps")]
    TooManySteps(usize),
    #[error("ODE produced a negative component at t = {t}: {state:?}")]
    NegativeState { t: f64, state: [f64; 3] },
    #[error("admissible-parameter acceptance rate {rate:.4} is below {min:.2}")]
    AcceptanceRate { rate: f64, min: f64 },
    #[error("no admissible parameter tuple after {0} draws")]
    DrawCapExceeded(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Self::InvalidParams(_) | Self::Domain(_) | Self::Config(_))
    }
}

fn join(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
