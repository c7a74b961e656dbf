//! Criticality-aware allocation of IoT message flows onto heterogeneous
//! networks, with an exact solver, classic bin-packing baselines, a framed
//! host↔node protocol and a deterministic edge-node simulator.

use std::path::{Path, PathBuf};

pub mod allocators;
pub mod cli;
pub mod flows;
pub mod metrics;
pub mod netmodel;
pub mod scalar;
pub mod simulator;
pub mod solver;
pub mod wire;

pub use allocators::{
    cabf, cabf_inv, heuristic, Algorithm, Allocation, AllocationProblem, AllocationTable, FitRule,
    HeuristicKind, LevelSide,
};
pub use flows::{CriticalityLevel, FlowSet, FlowSpec, Period, QosRequirement, ValidationError};
pub use metrics::{objective, report, AllocationReport};
pub use netmodel::{builtin_profile, BuiltinProfile, NetworkError, NetworkProfile, Technology};
pub use scalar::{Bandwidth, Rational, Utilization};
pub use simulator::{Scenario, SimReport};
pub use solver::{exact_solve, SolveError};

/// Allocation problem over integer micro-bps.
pub type Problem = AllocationProblem<Utilization>;
/// Allocation table over integer micro-bps.
pub type Table = AllocationTable<Utilization>;
/// Allocation report over integer micro-bps.
pub type Report = AllocationReport<Utilization>;
/// Allocation problem over floating-point bps, for analysis only.
pub type ProblemF64 = AllocationProblem<f64>;
/// Allocation problem over exact rational bps.
pub type ProblemExact = AllocationProblem<Rational>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid JSON at line {line}, column {column}: {message}")]
    Json { line: usize, column: usize, message: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Wire(#[from] wire::ParseError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("{}: {source}", path.display())]
    InFile { path: PathBuf, source: Box<Error> },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// Attaches a file path unless the error already names one.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::InFile { .. }) => e,
            e => Error::InFile { path: path.to_path_buf(), source: Box::new(e) },
        }
    }

    /// Process exit code: 2 for infeasible instances, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Solve(SolveError::Infeasible) => 2,
            Error::InFile { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        let message = e.to_string();
        // serde_json appends " at line L column C"; keep only the reason.
        let message = match message.rfind(" at line ") {
            Some(i) => message[..i].to_string(),
            None => message,
        };
        Error::Json { line: e.line(), column: e.column(), message }
    }
}
