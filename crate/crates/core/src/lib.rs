//! Composition of software integrity protections.
//!
//! Protection passes propose [`passes::Manifest`]s instead of transforming the
//! program directly. The manifests' constraints populate a
//! [`graph::DefenseGraph`]; cyclic dependencies are conflicts. A 0/1 integer
//! program ([`ilp`]) picks a conflict-free, cheapest subset meeting coverage
//! requirements, and [`composer`] applies it and simulates finalization to
//! prove that no guard raises a false alarm.

pub mod composer;
pub mod error;
pub mod fixtures;
pub mod graph;
pub mod ilp;
pub mod metrics;
pub mod passes;
pub mod program;

pub use composer::{compose, CompositionConfig, CompositionResult};
pub use error::{Error, Result};
pub use program::ProgramModel;
