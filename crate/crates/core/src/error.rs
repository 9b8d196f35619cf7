use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("transmission count must be even, got {0}")]
    OddTransmissions(usize),

    #[error("invalid transmission plan: {0}")]
    InvalidPlan(String),

    #[error("UE array has a single element; no null space towards the RIS")]
    NoNullSpace,

    #[error("singular Fisher information: {0}")]
    SingularFim(&'static str),

    #[error("fusion weights must lie in [0, 1] and sum to 1 (got {0}, {1})")]
    WeightViolation(f64, f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{}", format_config_error(.path, *.line, .message))]
    Config {
        path: Option<PathBuf>,
        line: Option<usize>,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_config_error(path: &Option<PathBuf>, line: Option<usize>, message: &str) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!("{}:{}: {}", p.display(), l, message),
        (Some(p), None) => format!("{}: {}", p.display(), message),
        (None, Some(l)) => format!("line {}: {}", l, message),
        (None, None) => message.to_string(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
