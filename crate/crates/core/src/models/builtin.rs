//! Canonical models used by tests, configs and the catalog.

use nalgebra::DMatrix;

use super::{BetaSchedule, FiniteCtmcModel, JarzynskiModel, TorusDiffusionModel};
use crate::error::Result;

/// Two states, `L = [[-1, 1], [2, -2]]`, `V = (0, 1)`.
pub fn m2() -> FiniteCtmcModel {
    FiniteCtmcModel::homogeneous(
        "m2",
        DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]),
        vec![0.0, 1.0],
    )
    .expect("m2 is a valid model")
}

/// Four-state ring: rate 1 clockwise, 0.5 counter-clockwise, `V(x) = x / 2`.
pub fn ring4() -> FiniteCtmcModel {
    let mut l = DMatrix::zeros(4, 4);
    for x in 0..4 {
        l[(x, (x + 1) % 4)] = 1.0;
        l[(x, (x + 3) % 4)] = 0.5;
        l[(x, x)] = -1.5;
    }
    FiniteCtmcModel::homogeneous("ring4", l, vec![0.0, 0.5, 1.0, 1.5]).expect("ring4 is a valid model")
}

/// Two states with energy `H = (0, 1)` and unit Metropolis proposal rates.
pub fn jarzynski_two_state(schedule: BetaSchedule) -> Result<JarzynskiModel> {
    JarzynskiModel::metropolis(
        vec![0.0, 1.0],
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        schedule,
    )
}

/// One-dimensional torus, drift `-sin(2πx)`, `σ = 0.5`, step `0.01`,
/// `V(x) = 1 - cos(2πx)`.
pub fn torus_default() -> TorusDiffusionModel {
    use std::f64::consts::TAU;
    TorusDiffusionModel::new(
        1,
        |_, x| vec![-(TAU * x[0]).sin()],
        0.5,
        0.01,
        |_, x| 1.0 - (TAU * x[0]).cos(),
        2.0,
        true,
    )
    .expect("torus model is valid")
}
