#![allow(dead_code)]

use preview_mpc::synthesis::{synthesize, Certificate, SynthesisOptions};
use preview_mpc::*;

/// Double integrator with full disturbance channel, the reference example.
pub fn double_integrator() -> LinearDynamics {
    LinearDynamics::new(
        Matrix::from_row_slice(2, 2, &[1., 1., 0., 1.]),
        Matrix::from_row_slice(2, 1, &[0.5, 1.]),
        Matrix::identity(2, 2),
    )
    .unwrap()
}

pub fn weights() -> CostWeights {
    CostWeights::new(
        Matrix::from_diagonal(&Vector::from_row_slice(&[10., 1.])),
        Matrix::identity(1, 1),
        Matrix::identity(2, 2),
    )
    .unwrap()
}

pub fn sets() -> (HPolytope, HPolytope, HPolytope) {
    (
        HPolytope::inf_ball(2, 1.0).unwrap(),
        HPolytope::inf_ball(1, 1.0).unwrap(),
        HPolytope::inf_ball(2, 0.1).unwrap(),
    )
}

pub fn ingredients() -> (TerminalIngredients, Certificate, usize) {
    let (x, u, w) = sets();
    synthesize(
        &double_integrator(),
        &weights(),
        &x,
        &u,
        &w,
        &SynthesisOptions::default(),
    )
    .unwrap()
}

pub fn spec(horizon: usize) -> OcpSpec {
    let (x, u, w) = sets();
    let (ing, _, _) = ingredients();
    OcpSpec::certified(
        DynamicsModel::linear(double_integrator()),
        horizon,
        x,
        u,
        w,
        weights(),
        ing,
    )
    .unwrap()
}

pub fn v(xs: &[f64]) -> Vector {
    Vector::from_row_slice(xs)
}

pub fn w_vertices() -> [Vector; 4] {
    [
        v(&[0.1, 0.1]),
        v(&[0.1, -0.1]),
        v(&[-0.1, 0.1]),
        v(&[-0.1, -0.1]),
    ]
}
