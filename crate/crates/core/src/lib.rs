//! Constrained model predictive control with an N-step disturbance preview.
//!
//! The crate is organised the way the controller is used:
//!
//! * [`model`] holds plants, constraint sets, weights and preview windows;
//! * [`polytope`] and [`lp`] provide the halfspace set algebra used offline;
//! * [`synthesis`] computes the terminal gain, terminal weight and robust
//!   positively invariant terminal set, and certifies them;
//! * [`qp`] and [`ocp`] condense and solve the finite-horizon problem online;
//! * [`controllers`] wraps the online problem into receding-horizon policies
//!   (preview MPC, nominal MPC, feedforward DRMPC, terminal law);
//! * [`harness`] runs closed loops, computes running costs and the
//!   recursive-feasibility / ISS diagnostics;
//! * [`io`] reads and writes the JSON and CSV artifacts used by the CLI.

#![allow(clippy::needless_range_loop)]

pub mod controllers;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod ocp;
pub mod polytope;
pub mod qp;
pub mod synthesis;

pub use controllers::{ControlStep, ControllerKind};
pub use error::Error;
pub use harness::{ClosedLoopTrace, Comparison, DisturbanceSpec, Scenario};
pub use linalg::{Matrix, Vector};
pub use model::{AugmentedState, CostWeights, DynamicsModel, LinearDynamics, PreviewWindow};
pub use ocp::{OcpSolution, OcpSpec, SolveStatus};
pub use polytope::HPolytope;
pub use qp::{QpForm, QpSolution, QpStatus};
pub use synthesis::{Certificate, IssLevelSet, SynthesisOptions, TerminalIngredients};
