use thiserror::Error;

use crate::passes::{ManifestId, ManifestKind};
use crate::program::{BlockId, FunctionId, InstrId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("unknown instruction {0}")]
    UnknownInstruction(InstrId),
    #[error("unknown function {0}")]
    UnknownFunction(FunctionId),
    #[error("unknown protection kind `{0}`")]
    UnknownKind(String),
    #[error("pass {0} is not enabled")]
    DisabledPass(ManifestKind),
    #[error("manifest {manifest} is stale: {detail}")]
    StaleManifest {
        manifest: ManifestId,
        detail: String,
    },
    #[error("manifest {manifest} violates static presence of function {function}")]
    PresenceViolation {
        manifest: ManifestId,
        function: FunctionId,
    },
    #[error("manifest {manifest} references missing node {node}")]
    DanglingReference { manifest: ManifestId, node: String },
    #[error("inconsistent input: {0}")]
    InconsistentInput(String),
    #[error("security requirements are infeasible")]
    InfeasibleRequirements,
    #[error("solver hit its time limit before proving optimality")]
    SolverTimedOut,
    #[error("residual cycles remain after {0} iterations")]
    IterationLimitExceeded(usize),
    #[error("dependency cycle remains among manifests {0:?}")]
    CycleRemains(Vec<ManifestId>),
    #[error("finalization inconsistent: {0}")]
    FinalizationInconsistent(String),
    #[error("false tamper alarm raised by manifest {0}")]
    FalseAlarm(ManifestId),
}

impl Error {
    /// Process exit code for the command-line frontend: 1 for domain failures,
    /// 2 for usage, parse and IO failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Parse(_) | Error::Validation(_) | Error::UnknownKind(_) => 2,
            _ => 1,
        }
    }

    /// Short stable identifier used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
            Error::Validation(_) => "validation",
            Error::UnknownBlock(_) => "unknown_block",
            Error::UnknownInstruction(_) => "unknown_instruction",
            Error::UnknownFunction(_) => "unknown_function",
            Error::UnknownKind(_) => "unknown_kind",
            Error::DisabledPass(_) => "disabled_pass",
            Error::StaleManifest { .. } => "stale_manifest",
            Error::PresenceViolation { .. } => "presence_violation",
            Error::DanglingReference { .. } => "dangling_reference",
            Error::InconsistentInput(_) => "inconsistent_input",
            Error::InfeasibleRequirements => "infeasible",
            Error::SolverTimedOut => "timed_out",
            Error::IterationLimitExceeded(_) => "iteration_limit",
            Error::CycleRemains(_) => "cycle_remains",
            Error::FinalizationInconsistent(_) => "finalization_inconsistent",
            Error::FalseAlarm(_) => "false_alarm",
        }
    }
}
