//! Plants, weights, preview windows and the operations on them.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{is_symmetric, spectral_norm, sym_eig_min, Matrix, Vector};
use crate::polytope::{HPolytope, MEMBERSHIP_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("dynamics evaluator failed: {0}")]
    Evaluator(String),
    #[error("disturbance {index} lies outside the disturbance set (violation {violation:.3e})")]
    OutsideDisturbanceSet { index: usize, violation: f64 },
    #[error("invalid cost weights: {0}")]
    InvalidWeights(String),
    #[error("non-finite value in {0}")]
    NotFinite(&'static str),
}

fn check_len(what: &'static str, v: &Vector, expected: usize) -> Result<(), ModelError> {
    if v.len() != expected {
        return Err(ModelError::DimensionMismatch {
            what,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

fn check_shape(what: &'static str, m: &Matrix, rows: usize, cols: usize) -> Result<(), ModelError> {
    if m.nrows() != rows {
        return Err(ModelError::DimensionMismatch {
            what,
            expected: rows,
            got: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(ModelError::DimensionMismatch {
            what,
            expected: cols,
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NotFinite(what));
    }
    Ok(())
}

/// `x⁺ = A x + B u + B_w w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: Matrix,
    pub b: Matrix,
    pub bw: Matrix,
}

impl LinearDynamics {
    pub fn new(a: Matrix, b: Matrix, bw: Matrix) -> Result<Self, ModelError> {
        let n = a.nrows();
        check_shape("A", &a, n, n)?;
        check_shape("B", &b, n, b.ncols())?;
        check_shape("Bw", &bw, n, bw.ncols())?;
        Ok(Self { a, b, bw })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn q(&self) -> usize {
        self.bw.ncols()
    }

    /// `A + B K`.
    pub fn closed_loop(&self, k: &Matrix) -> Matrix {
        &self.a + &self.b * k
    }

    /// Gain of the disturbance channel, `‖f(x,u,w) − f(x,u,0)‖ ≤ ‖B_w‖·‖w‖`.
    pub fn disturbance_gain(&self) -> f64 {
        spectral_norm(&self.bw)
    }
}

pub type DynamicsFn = dyn Fn(&Vector, &Vector, &Vector) -> Result<Vector, String> + Send + Sync;
pub type JacobianFn =
    dyn Fn(&Vector, &Vector, &Vector) -> Result<(Matrix, Matrix, Matrix), String> + Send + Sync;

#[derive(Clone)]
pub enum DynamicsKind {
    Linear(LinearDynamics),
    Nonlinear {
        f: Arc<DynamicsFn>,
        jacobians: Option<Arc<JacobianFn>>,
    },
}

/// Discrete-time plant `x⁺ = f(x, u, w)`.
#[derive(Clone)]
pub struct DynamicsModel {
    n: usize,
    m: usize,
    q: usize,
    kind: DynamicsKind,
}

impl fmt::Debug for DynamicsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("DynamicsModel");
        d.field("n", &self.n)
            .field("m", &self.m)
            .field("q", &self.q);
        match &self.kind {
            DynamicsKind::Linear(lin) => d.field("linear", lin),
            DynamicsKind::Nonlinear { jacobians, .. } => {
                d.field("nonlinear_analytic_jacobians", &jacobians.is_some())
            }
        };
        d.finish()
    }
}

impl DynamicsModel {
    pub fn linear(lin: LinearDynamics) -> Self {
        Self {
            n: lin.n(),
            m: lin.m(),
            q: lin.q(),
            kind: DynamicsKind::Linear(lin),
        }
    }

    pub fn nonlinear<F>(n: usize, m: usize, q: usize, f: F) -> Self
    where
        F: Fn(&Vector, &Vector, &Vector) -> Result<Vector, String> + Send + Sync + 'static,
    {
        Self {
            n,
            m,
            q,
            kind: DynamicsKind::Nonlinear {
                f: Arc::new(f),
                jacobians: None,
            },
        }
    }

    /// Attach analytic Jacobians `(∂f/∂x, ∂f/∂u, ∂f/∂w)`; ignored for linear models.
    pub fn with_jacobians<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Vector, &Vector, &Vector) -> Result<(Matrix, Matrix, Matrix), String>
            + Send
            + Sync
            + 'static,
    {
        if let DynamicsKind::Nonlinear { jacobians, .. } = &mut self.kind {
            *jacobians = Some(Arc::new(jac));
        }
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn kind(&self) -> &DynamicsKind {
        &self.kind
    }

    pub fn as_linear(&self) -> Option<&LinearDynamics> {
        match &self.kind {
            DynamicsKind::Linear(lin) => Some(lin),
            DynamicsKind::Nonlinear { .. } => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.as_linear().is_some()
    }

    fn check_args(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<(), ModelError> {
        check_len("state", x, self.n)?;
        check_len("input", u, self.m)?;
        check_len("disturbance", w, self.q)
    }
}

/// Evaluate `f(x, u, w)`.
///
/// For linear models the result is `(A x + B u) + B_w w`, always in that order.
pub fn step_dynamics(
    model: &DynamicsModel,
    x: &Vector,
    u: &Vector,
    w: &Vector,
) -> Result<Vector, ModelError> {
    model.check_args(x, u, w)?;
    match &model.kind {
        DynamicsKind::Linear(lin) => Ok(&lin.a * x + &lin.b * u + &lin.bw * w),
        DynamicsKind::Nonlinear { f, .. } => {
            let out = f(x, u, w).map_err(ModelError::Evaluator)?;
            check_len("dynamics output", &out, model.n)?;
            if out.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NotFinite("dynamics output"));
            }
            Ok(out)
        }
    }
}

fn fd_step(coord: f64) -> f64 {
    (1e-6 * coord.abs()).max(1e-6)
}

/// Central finite-difference Jacobians, column by column.
pub fn finite_difference_jacobians(
    model: &DynamicsModel,
    x0: &Vector,
    u0: &Vector,
    w0: &Vector,
) -> Result<LinearDynamics, ModelError> {
    model.check_args(x0, u0, w0)?;
    let n = model.n;
    let eval = |x: &Vector, u: &Vector, w: &Vector| step_dynamics(model, x, u, w);

    let mut a = Matrix::zeros(n, model.n);
    for j in 0..model.n {
        let h = fd_step(x0[j]);
        let (mut xp, mut xm) = (x0.clone(), x0.clone());
        xp[j] += h;
        xm[j] -= h;
        let col = (eval(&xp, u0, w0)? - eval(&xm, u0, w0)?) / (2.0 * h);
        a.set_column(j, &col);
    }
    let mut b = Matrix::zeros(n, model.m);
    for j in 0..model.m {
        let h = fd_step(u0[j]);
        let (mut up, mut um) = (u0.clone(), u0.clone());
        up[j] += h;
        um[j] -= h;
        let col = (eval(x0, &up, w0)? - eval(x0, &um, w0)?) / (2.0 * h);
        b.set_column(j, &col);
    }
    let mut bw = Matrix::zeros(n, model.q);
    for j in 0..model.q {
        let h = fd_step(w0[j]);
        let (mut wp, mut wm) = (w0.clone(), w0.clone());
        wp[j] += h;
        wm[j] -= h;
        let col = (eval(x0, u0, &wp)? - eval(x0, u0, &wm)?) / (2.0 * h);
        bw.set_column(j, &col);
    }
    Ok(LinearDynamics { a, b, bw })
}

/// Jacobian linearisation `(∂f/∂x, ∂f/∂u, ∂f/∂w)` at `(x0, u0, w0)`.
///
/// Linear models return their own matrices, nonlinear models their analytic
/// Jacobians when attached and central finite differences otherwise.
pub fn jacobian_linearize(
    model: &DynamicsModel,
    x0: &Vector,
    u0: &Vector,
    w0: &Vector,
) -> Result<LinearDynamics, ModelError> {
    model.check_args(x0, u0, w0)?;
    match &model.kind {
        DynamicsKind::Linear(lin) => Ok(lin.clone()),
        DynamicsKind::Nonlinear {
            jacobians: Some(jac),
            ..
        } => {
            let (a, b, bw) = jac(x0, u0, w0).map_err(ModelError::Evaluator)?;
            check_shape("dF/dx", &a, model.n, model.n)?;
            check_shape("dF/du", &b, model.n, model.m)?;
            check_shape("dF/dw", &bw, model.n, model.q)?;
            Ok(LinearDynamics { a, b, bw })
        }
        DynamicsKind::Nonlinear {
            jacobians: None, ..
        } => finite_difference_jacobians(model, x0, u0, w0),
    }
}

/// Linearisation at the origin, used for terminal ingredient synthesis.
pub fn linearize_at_origin(model: &DynamicsModel) -> Result<LinearDynamics, ModelError> {
    jacobian_linearize(
        model,
        &Vector::zeros(model.n),
        &Vector::zeros(model.m),
        &Vector::zeros(model.q),
    )
}

/// Result of comparing analytic Jacobians against finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianCheck {
    pub points: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Compare every analytic Jacobian column with central differences at the
/// given points. Relative error is `‖a − fd‖ / max(1, ‖fd‖)`; passes at 1e-5.
/// Models without analytic Jacobians pass trivially.
pub fn check_analytic_jacobians(
    model: &DynamicsModel,
    points: &[(Vector, Vector, Vector)],
) -> Result<JacobianCheck, ModelError> {
    let mut worst: f64 = 0.0;
    if let DynamicsKind::Nonlinear {
        jacobians: Some(_), ..
    } = &model.kind
    {
        for (x, u, w) in points {
            let analytic = jacobian_linearize(model, x, u, w)?;
            let fd = finite_difference_jacobians(model, x, u, w)?;
            for (ma, mf) in [
                (&analytic.a, &fd.a),
                (&analytic.b, &fd.b),
                (&analytic.bw, &fd.bw),
            ] {
                for j in 0..ma.ncols() {
                    let diff = (ma.column(j) - mf.column(j)).norm();
                    worst = worst.max(diff / mf.column(j).norm().max(1.0));
                }
            }
        }
    }
    Ok(JacobianCheck {
        points: points.len(),
        max_relative_error: worst,
        passed: worst <= 1e-5,
    })
}

/// Stage and preview weights `‖x‖²_Q + ‖u‖²_R + ‖w‖²_S`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: Matrix,
    pub r: Matrix,
    pub s: Matrix,
}

impl CostWeights {
    /// Requires symmetry to 1e-12, `Q ⪰ 0`, `R ≻ 0` and `S ≻ 0`.
    pub fn new(q: Matrix, r: Matrix, s: Matrix) -> Result<Self, ModelError> {
        for (name, m) in [("Q", &q), ("R", &r), ("S", &s)] {
            if !m.is_square() {
                return Err(ModelError::InvalidWeights(format!("{name} is not square")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NotFinite("weights"));
            }
            if !is_symmetric(m, 1e-12) {
                return Err(ModelError::InvalidWeights(format!(
                    "{name} is not symmetric"
                )));
            }
        }
        if q.nrows() > 0 && sym_eig_min(&q) < -1e-12 {
            return Err(ModelError::InvalidWeights(
                "Q must be positive semidefinite".into(),
            ));
        }
        if r.nrows() > 0 && sym_eig_min(&r) <= 0.0 {
            return Err(ModelError::InvalidWeights(
                "R must be positive definite".into(),
            ));
        }
        if s.nrows() > 0 && sym_eig_min(&s) <= 0.0 {
            return Err(ModelError::InvalidWeights(
                "S must be positive definite".into(),
            ));
        }
        Ok(Self { q, r, s })
    }

    pub fn check_dims(&self, n: usize, m: usize, q: usize) -> Result<(), ModelError> {
        check_shape("Q", &self.q, n, n)?;
        check_shape("R", &self.r, m, m)?;
        check_shape("S", &self.s, q, q)
    }
}

/// The forecast `w(k|k), …, w(k+N−1|k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviewWindow {
    values: Vec<Vector>,
}

impl PreviewWindow {
    /// Build a window whose every element lies in `w_set`.
    pub fn new(values: Vec<Vector>, w_set: &HPolytope) -> Result<Self, ModelError> {
        let window = Self::unchecked(values, w_set.dim())?;
        window.check_within(w_set)?;
        Ok(window)
    }

    /// Build a window checking only dimensions.
    pub fn unchecked(values: Vec<Vector>, q: usize) -> Result<Self, ModelError> {
        for v in &values {
            check_len("preview element", v, q)?;
        }
        Ok(Self { values })
    }

    pub fn zeros(horizon: usize, q: usize) -> Self {
        Self {
            values: vec![Vector::zeros(q); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn get(&self, i: usize) -> &Vector {
        &self.values[i]
    }

    pub fn head(&self) -> &Vector {
        &self.values[0]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|&c| c == 0.0))
    }

    /// Sum of squared Euclidean norms, the window norm used in diagnostics.
    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v.norm_squared()).sum()
    }

    pub fn check_within(&self, w_set: &HPolytope) -> Result<(), ModelError> {
        for (index, v) in self.values.iter().enumerate() {
            check_len("preview element", v, w_set.dim())?;
            let violation = w_set.max_violation(v);
            if violation > MEMBERSHIP_TOL {
                return Err(ModelError::OutsideDisturbanceSet { index, violation });
            }
        }
        Ok(())
    }
}

/// Advance the window by one step: drop the head and append `w_incoming`.
///
/// This is the action of the nilpotent shift `A_w` plus the tail injection
/// `B_w w₀`, implemented as a rotation.
pub fn shift_preview(
    window: &PreviewWindow,
    w_incoming: &Vector,
    w_set: &HPolytope,
) -> Result<PreviewWindow, ModelError> {
    check_len("incoming disturbance", w_incoming, w_set.dim())?;
    let violation = w_set.max_violation(w_incoming);
    if violation > MEMBERSHIP_TOL {
        return Err(ModelError::OutsideDisturbanceSet {
            index: window.horizon(),
            violation,
        });
    }
    if window.horizon() == 0 {
        return Ok(window.clone());
    }
    let mut values = Vec::with_capacity(window.horizon());
    values.extend(window.values[1..].iter().cloned());
    values.push(w_incoming.clone());
    Ok(PreviewWindow { values })
}

/// `z = [xᵀ, 𝐰ᵀ]ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: Vector,
    pub window: PreviewWindow,
}

impl AugmentedState {
    pub fn stacked(&self) -> Vector {
        let q = self.window.values.first().map_or(0, |v| v.len());
        let mut z = Vector::zeros(self.x.len() + q * self.window.horizon());
        z.rows_mut(0, self.x.len()).copy_from(&self.x);
        for (i, w) in self.window.values.iter().enumerate() {
            z.rows_mut(self.x.len() + i * q, q).copy_from(w);
        }
        z
    }
}

/// Outcome of checking the PC-set conditions on a constraint set.
#[derive(Debug, Clone, PartialEq)]
pub struct PcSetReport {
    pub nonempty: bool,
    pub bounded: bool,
    pub origin_interior: bool,
    /// `min gᵢ` over unit-normalised rows: distance from the origin to the nearest face.
    pub interior_margin: f64,
}

impl PcSetReport {
    pub fn passed(&self) -> bool {
        self.nonempty && self.bounded && self.origin_interior
    }
}

/// Check nonemptiness, boundedness and strict origin interiority.
pub fn validate_pc_set(set: &HPolytope) -> PcSetReport {
    let nonempty = !set.is_empty();
    let bounded = nonempty && set.is_bounded();
    let interior_margin = set.origin_margin();
    PcSetReport {
        nonempty,
        bounded,
        origin_interior: nonempty && interior_margin > MEMBERSHIP_TOL,
        interior_margin,
    }
}

/// Lipschitz gain of the disturbance channel; for linear plants `‖B_w‖`.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceGain {
    Linear(f64),
    Unverified,
}

pub fn disturbance_gain(model: &DynamicsModel) -> DisturbanceGain {
    match model.as_linear() {
        Some(lin) => DisturbanceGain::Linear(lin.disturbance_gain()),
        None => DisturbanceGain::Unverified,
    }
}
