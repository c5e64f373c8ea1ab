//! Manifest selection as a 0/1 integer linear program.

mod lp;
mod model;
mod solver;

pub use lp::{export_lp, parse_lp};
pub use model::{
    build_model, complete_assignment, Bound, IlpModel, LinearConstraint, Metric, ModelOptions,
    Requirement, Sense, VarRole,
};
pub use solver::{solve, Solution, Status};
