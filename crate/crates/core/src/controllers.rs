//! Receding-horizon policies mapping `(x, window)` to an input.
//!
//! * preview MPC solves the OCP with the full disturbance window;
//! * nominal MPC solves the same OCP with the window forced to zero;
//! * DRMPC first cancels the matched part of the current disturbance with a
//!   least-squares feedforward `u_ff = −B⁺B_w w(k)`, then optimises `u_c` for
//!   the residual first-step disturbance `(I − BB⁺)B_w w(k)` and nothing after;
//! * the terminal law is `u = Kx`.
//!
//! An infeasible OCP makes the MPC policies fall back to the terminal law;
//! the step is flagged so callers can count it.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::linalg::{pinv, Matrix, Vector};
use crate::model::{LinearDynamics, PreviewWindow};
use crate::ocp::{solve_affine, solve_ocp, AffinePrediction, OcpError, OcpSolution, OcpSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    #[serde(rename = "preview")]
    PreviewMpc,
    #[serde(rename = "nominal")]
    NominalMpc,
    Drmpc,
    #[serde(rename = "terminal")]
    TerminalLaw,
}

impl ControllerKind {
    /// The three MPC policies in comparison-table order.
    pub const COMPARED: [ControllerKind; 3] = [
        ControllerKind::NominalMpc,
        ControllerKind::Drmpc,
        ControllerKind::PreviewMpc,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::PreviewMpc => "preview",
            ControllerKind::NominalMpc => "nominal",
            ControllerKind::Drmpc => "drmpc",
            ControllerKind::TerminalLaw => "terminal",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "preview" => Ok(ControllerKind::PreviewMpc),
            "nominal" => Ok(ControllerKind::NominalMpc),
            "drmpc" => Ok(ControllerKind::Drmpc),
            "terminal" => Ok(ControllerKind::TerminalLaw),
            other => Err(format!(
                "unknown controller '{other}' (expected preview, nominal, drmpc or terminal)"
            )),
        }
    }
}

/// One policy evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    /// Input applied to the plant.
    pub u: Vector,
    /// OCP solution behind `u`; `None` for the terminal law.
    pub solution: Option<OcpSolution>,
    /// Known input added to the optimised first element (DRMPC feedforward).
    pub feedforward: Option<Vector>,
    /// The OCP was not solved to optimality and `u = Kx` was applied instead.
    pub fallback: bool,
}

pub fn terminal_law(k: &Matrix, x: &Vector) -> Vector {
    k * x
}

/// `u_ff = −B⁺B_w w`.
pub fn feedforward(lin: &LinearDynamics, w: &Vector) -> Vector {
    -(pinv(&lin.b) * &lin.bw * w)
}

/// Prediction used by DRMPC: residual disturbance at the first step, none after.
pub fn drmpc_prediction(lin: &LinearDynamics, horizon: usize, w_now: &Vector) -> AffinePrediction {
    let bp = pinv(&lin.b);
    let n = lin.n();
    let residual = (Matrix::identity(n, n) - &lin.b * &bp) * &lin.bw * w_now;
    let mut c = vec![Vector::zeros(n); horizon];
    c[0] = residual;
    let mut input_offset = vec![Vector::zeros(lin.m()); horizon];
    input_offset[0] = -(&bp * &lin.bw * w_now);
    AffinePrediction {
        a: vec![lin.a.clone(); horizon],
        b: vec![lin.b.clone(); horizon],
        c,
        input_offset,
        constant_cost: 0.0,
    }
}

fn finish(
    spec: &OcpSpec,
    x: &Vector,
    kind: ControllerKind,
    sol: OcpSolution,
    feedforward: Option<Vector>,
) -> ControlStep {
    if sol.is_optimal() {
        let mut u = sol.u_seq[0].clone();
        if let Some(ff) = &feedforward {
            u += ff;
        }
        ControlStep {
            u,
            solution: Some(sol),
            feedforward,
            fallback: false,
        }
    } else {
        warn!(
            "{kind} OCP returned {} at x = {:?}; applying terminal law",
            sol.status.as_str(),
            x.as_slice()
        );
        ControlStep {
            u: terminal_law(&spec.terminal.k, x),
            solution: Some(sol),
            feedforward,
            fallback: true,
        }
    }
}

pub fn preview_mpc_step(
    spec: &OcpSpec,
    x: &Vector,
    window: &PreviewWindow,
    warm: Option<&OcpSolution>,
) -> Result<ControlStep, OcpError> {
    let sol = solve_ocp(spec, x, window, warm)?;
    Ok(finish(spec, x, ControllerKind::PreviewMpc, sol, None))
}

pub fn nominal_mpc_step(
    spec: &OcpSpec,
    x: &Vector,
    warm: Option<&OcpSolution>,
) -> Result<ControlStep, OcpError> {
    let zero = PreviewWindow::zeros(spec.horizon, spec.model.q());
    let sol = solve_ocp(spec, x, &zero, warm)?;
    Ok(finish(spec, x, ControllerKind::NominalMpc, sol, None))
}

/// DRMPC needs the linear input matrix for the matched/unmatched split.
pub fn drmpc_step(spec: &OcpSpec, x: &Vector, w_now: &Vector) -> Result<ControlStep, OcpError> {
    let lin = spec.model.as_linear().ok_or(OcpError::NotLinear)?;
    let window = PreviewWindow::new(vec![w_now.clone()], &spec.w_set)?;
    let pred = drmpc_prediction(lin, spec.horizon, window.head());
    let ff = pred.input_offset[0].clone();
    let sol = solve_affine(spec, x, &pred)?;
    Ok(finish(spec, x, ControllerKind::Drmpc, sol, Some(ff)))
}

/// Dispatch on the controller kind. DRMPC reads only the head of the window.
pub fn control_step(
    kind: ControllerKind,
    spec: &OcpSpec,
    x: &Vector,
    window: &PreviewWindow,
    warm: Option<&OcpSolution>,
) -> Result<ControlStep, OcpError> {
    match kind {
        ControllerKind::PreviewMpc => preview_mpc_step(spec, x, window, warm),
        ControllerKind::NominalMpc => nominal_mpc_step(spec, x, warm),
        ControllerKind::Drmpc => drmpc_step(spec, x, window.head()),
        ControllerKind::TerminalLaw => Ok(ControlStep {
            u: terminal_law(&spec.terminal.k, x),
            solution: None,
            feedforward: None,
            fallback: false,
        }),
    }
}

/// The affine prediction a controller optimises over at state-independent
/// data `window`; `None` for nonlinear plants (their prediction is the model).
pub fn controller_prediction(
    kind: ControllerKind,
    spec: &OcpSpec,
    window: &PreviewWindow,
) -> Option<AffinePrediction> {
    let lin = spec.model.as_linear()?;
    Some(match kind {
        ControllerKind::PreviewMpc | ControllerKind::TerminalLaw => {
            AffinePrediction::linear(lin, window, &spec.weights.s)
        }
        ControllerKind::NominalMpc => AffinePrediction::linear(
            lin,
            &PreviewWindow::zeros(spec.horizon, spec.model.q()),
            &spec.weights.s,
        ),
        ControllerKind::Drmpc => drmpc_prediction(lin, spec.horizon, window.head()),
    })
}
