//! Fixtures shared by the benchmarks: the double-integrator reference system.

use preview_mpc::synthesis::{synthesize, SynthesisOptions};
use preview_mpc::{
    CostWeights, DynamicsModel, HPolytope, LinearDynamics, Matrix, OcpSpec, PreviewWindow, Vector,
};

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

/// `(X, U, W)`.
pub fn sets() -> (HPolytope, HPolytope, HPolytope) {
    (
        HPolytope::inf_ball(2, 1.0).unwrap(),
        HPolytope::inf_ball(1, 1.0).unwrap(),
        HPolytope::inf_ball(2, 0.1).unwrap(),
    )
}

pub fn spec(horizon: usize) -> OcpSpec {
    let (x, u, w) = sets();
    let (ing, _, _) = synthesize(
        &double_integrator(),
        &weights(),
        &x,
        &u,
        &w,
        &SynthesisOptions::default(),
    )
    .unwrap();
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

/// A fixed window touching the corners of `W`.
pub fn window(horizon: usize) -> PreviewWindow {
    let corners = [[0.1, -0.1], [-0.1, -0.1], [0.1, 0.1], [-0.1, 0.1]];
    let values = (0..horizon)
        .map(|i| Vector::from_row_slice(&corners[i % 4]))
        .collect();
    PreviewWindow::unchecked(values, 2).unwrap()
}
