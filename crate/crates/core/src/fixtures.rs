//! Built-in example programs.

use crate::program::ProgramModel;

const MILEAGE: &str = include_str!("../tests/fixtures/mileage.json");

/// Car mileage counter: `onWheelRotationCompleted` bumps a rotation count and
/// calls `incrementMileage` every full wheel turn. Both functions are sensitive.
pub fn mileage() -> ProgramModel {
    ProgramModel::from_json(MILEAGE).expect("bundled fixture is valid")
}
