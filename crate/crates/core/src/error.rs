use std::path::PathBuf;

use crate::protocol::Violation;

/// Errors raised by the library. Each variant corresponds to one failure
/// class; the CLI maps them onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("alignment degenerate: {0}")]
    AlignmentDegenerate(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("protocol invalid: {}", format_violations(.0))]
    ProtocolInvalid(Vec<Violation>),

    #[error("simulation degenerate: {0}")]
    SimulationDegenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("unbalanced design: {0}")]
    UnbalancedDesign(String),

    #[error("invalid degrees of freedom: {0}")]
    InvalidDegreesOfFreedom(String),

    #[error("planning infeasible: {0}")]
    PlanningInfeasible(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
