//! Finite-horizon optimal control problem with a known in-horizon disturbance.
//!
//! ```text
//! V⁰_N(x, 𝐰) = min_𝐮  Σ_{i<N} ‖xᵢ‖²_Q + ‖uᵢ‖²_R + ‖wᵢ‖²_S  +  ‖x_N‖²_P
//!   s.t.  x₀ = x,  x_{i+1} = f(xᵢ, uᵢ, wᵢ),  xᵢ ∈ X,  uᵢ ∈ U,  x_N ∈ X_f
//! ```
//!
//! Linear plants are condensed densely into a QP in the stacked input
//! sequence. Nonlinear plants are handled by successive linearisation around
//! the previous iterate, re-condensing every pass.

use thiserror::Error;

use crate::linalg::{quad_form, symmetrize, Matrix, Vector};
use crate::model::{
    jacobian_linearize, linearize_at_origin, step_dynamics, CostWeights, DynamicsModel,
    LinearDynamics, ModelError, PreviewWindow,
};
use crate::polytope::HPolytope;
use crate::qp::{solve_qp, QpError, QpStatus};
use crate::synthesis::{verify_terminal_ingredients, Certificate, TerminalIngredients};

pub use crate::qp::QpForm;

const SL_TOL: f64 = 1e-8;
const SL_MAX_PASSES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("window length {got} does not match horizon {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("{0} set dimension does not match the model")]
    SetDimension(&'static str),
    #[error("condensing requires a linear model")]
    NotLinear,
    #[error("terminal ingredients are not certified: {0:?}")]
    NotCertified(Box<Certificate>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

pub type SolveStatus = QpStatus;

/// Everything the online problem needs.
#[derive(Debug, Clone)]
pub struct OcpSpec {
    pub model: DynamicsModel,
    pub horizon: usize,
    pub x_set: HPolytope,
    pub u_set: HPolytope,
    pub w_set: HPolytope,
    pub weights: CostWeights,
    pub terminal: TerminalIngredients,
}

impl OcpSpec {
    pub fn new(
        model: DynamicsModel,
        horizon: usize,
        x_set: HPolytope,
        u_set: HPolytope,
        w_set: HPolytope,
        weights: CostWeights,
        terminal: TerminalIngredients,
    ) -> Result<Self, OcpError> {
        if horizon == 0 {
            return Err(OcpError::ZeroHorizon);
        }
        let (n, m, q) = (model.n(), model.m(), model.q());
        if x_set.dim() != n {
            return Err(OcpError::SetDimension("state"));
        }
        if u_set.dim() != m {
            return Err(OcpError::SetDimension("input"));
        }
        if w_set.dim() != q {
            return Err(OcpError::SetDimension("disturbance"));
        }
        if terminal.xf.dim() != n {
            return Err(OcpError::SetDimension("terminal"));
        }
        weights.check_dims(n, m, q)?;
        if terminal.k.nrows() != m || terminal.k.ncols() != n {
            return Err(OcpError::SetDimension("gain"));
        }
        if terminal.p.nrows() != n || terminal.p.ncols() != n {
            return Err(OcpError::SetDimension("terminal weight"));
        }
        Ok(Self {
            model,
            horizon,
            x_set,
            u_set,
            w_set,
            weights,
            terminal,
        })
    }

    /// As [`OcpSpec::new`], additionally requiring certified terminal ingredients.
    pub fn certified(
        model: DynamicsModel,
        horizon: usize,
        x_set: HPolytope,
        u_set: HPolytope,
        w_set: HPolytope,
        weights: CostWeights,
        terminal: TerminalIngredients,
    ) -> Result<Self, OcpError> {
        let spec = Self::new(model, horizon, x_set, u_set, w_set, weights, terminal)?;
        let cert = spec.certificate()?;
        if !cert.certified() {
            return Err(OcpError::NotCertified(Box::new(cert)));
        }
        Ok(spec)
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self, OcpError> {
        if horizon == 0 {
            return Err(OcpError::ZeroHorizon);
        }
        let mut s = self.clone();
        s.horizon = horizon;
        Ok(s)
    }

    /// Linear model, or the linearisation at the origin.
    pub fn linearization(&self) -> Result<LinearDynamics, OcpError> {
        Ok(linearize_at_origin(&self.model)?)
    }

    pub fn certificate(&self) -> Result<Certificate, OcpError> {
        let lin = self.linearization()?;
        Ok(verify_terminal_ingredients(
            &self.terminal,
            &lin,
            &self.weights,
            &self.x_set,
            &self.u_set,
            &self.w_set,
        ))
    }

    pub fn stage_cost(&self, x: &Vector, u: &Vector, w: &Vector) -> f64 {
        quad_form(&self.weights.q, x)
            + quad_form(&self.weights.r, u)
            + quad_form(&self.weights.s, w)
    }
}

/// Time-varying affine prediction `x_{i+1} = Aᵢxᵢ + Bᵢuᵢ + cᵢ` over the horizon.
///
/// `input_offset[i]` is a known input added to the decision `uᵢ` before the
/// input constraint is applied (`uᵢ + offsetᵢ ∈ U`); the cost still weighs
/// the decision `uᵢ`. `constant_cost` collects decision-independent terms
/// such as `Σ‖wᵢ‖²_S`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePrediction {
    pub a: Vec<Matrix>,
    pub b: Vec<Matrix>,
    pub c: Vec<Vector>,
    pub input_offset: Vec<Vector>,
    pub constant_cost: f64,
}

impl AffinePrediction {
    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    /// Prediction of a linear plant under a known disturbance window.
    pub fn linear(lin: &LinearDynamics, window: &PreviewWindow, s: &Matrix) -> Self {
        let horizon = window.horizon();
        Self {
            a: vec![lin.a.clone(); horizon],
            b: vec![lin.b.clone(); horizon],
            c: window.values().iter().map(|w| &lin.bw * w).collect(),
            input_offset: vec![Vector::zeros(lin.m()); horizon],
            constant_cost: window.values().iter().map(|w| quad_form(s, w)).sum(),
        }
    }

    /// Roll the prediction forward from `x0` under `u_seq`.
    pub fn rollout(&self, x0: &Vector, u_seq: &[Vector]) -> Vec<Vector> {
        let mut xs = Vec::with_capacity(self.horizon() + 1);
        xs.push(x0.clone());
        for i in 0..self.horizon() {
            let next = &self.a[i] * &xs[i] + &self.b[i] * &u_seq[i] + &self.c[i];
            xs.push(next);
        }
        xs
    }
}

/// Row ranges of the condensed constraint matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintLayout {
    pub state_rows: usize,
    pub input_rows: usize,
    pub terminal_rows: usize,
}

/// Condense an affine prediction: `xᵢ = sᵢ + Gᵢ𝐮`, then collect the cost and
/// constraints in `𝐮`.
pub fn condense_prediction(
    spec: &OcpSpec,
    x0: &Vector,
    pred: &AffinePrediction,
) -> (QpForm, ConstraintLayout) {
    let n = spec.model.n();
    let m = spec.model.m();
    let horizon = pred.horizon();
    let nv = horizon * m;

    let mut s = Vec::with_capacity(horizon + 1);
    let mut g = Vec::with_capacity(horizon + 1);
    s.push(x0.clone());
    g.push(Matrix::zeros(n, nv));
    for i in 0..horizon {
        let si = &pred.a[i] * &s[i] + &pred.c[i];
        let mut gi = &pred.a[i] * &g[i];
        let mut blk = gi.view_mut((0, i * m), (n, m));
        blk += &pred.b[i];
        s.push(si);
        g.push(gi);
    }

    let q = &spec.weights.q;
    let r = &spec.weights.r;
    let p = &spec.terminal.p;
    let mut hess = Matrix::zeros(nv, nv);
    let mut lin = Vector::zeros(nv);
    let mut const_term = pred.constant_cost;
    for i in 0..=horizon {
        let w = if i < horizon { q } else { p };
        let gtw = g[i].transpose() * w;
        hess += &gtw * &g[i];
        lin += &gtw * &s[i];
        const_term += quad_form(w, &s[i]);
    }
    for i in 0..horizon {
        let mut blk = hess.view_mut((i * m, i * m), (m, m));
        blk += r;
    }
    let hess = symmetrize(&(hess * 2.0));
    let lin = lin * 2.0;

    let hx = spec.x_set.h();
    let gx = spec.x_set.g();
    let hu = spec.u_set.h();
    let gu = spec.u_set.g();
    let hf = spec.terminal.xf.h();
    let gf = spec.terminal.xf.g();
    let layout = ConstraintLayout {
        state_rows: horizon * hx.nrows(),
        input_rows: horizon * hu.nrows(),
        terminal_rows: hf.nrows(),
    };
    let total = layout.state_rows + layout.input_rows + layout.terminal_rows;
    let mut a = Matrix::zeros(total, nv);
    let mut b = Vector::zeros(total);
    let mut row = 0;
    for i in 0..horizon {
        let k = hx.nrows();
        a.view_mut((row, 0), (k, nv)).copy_from(&(hx * &g[i]));
        b.rows_mut(row, k).copy_from(&(gx - hx * &s[i]));
        row += k;
    }
    for i in 0..horizon {
        let k = hu.nrows();
        a.view_mut((row, i * m), (k, m)).copy_from(hu);
        b.rows_mut(row, k)
            .copy_from(&(gu - hu * &pred.input_offset[i]));
        row += k;
    }
    let k = hf.nrows();
    a.view_mut((row, 0), (k, nv)).copy_from(&(hf * &g[horizon]));
    b.rows_mut(row, k).copy_from(&(gf - hf * &s[horizon]));

    (
        QpForm {
            hess,
            lin,
            const_term,
            ineq_a: a,
            ineq_b: b,
        },
        layout,
    )
}

fn check_window(spec: &OcpSpec, window: &PreviewWindow) -> Result<(), OcpError> {
    if window.horizon() != spec.horizon {
        return Err(OcpError::WindowLength {
            expected: spec.horizon,
            got: window.horizon(),
        });
    }
    window.check_within(&spec.w_set)?;
    Ok(())
}

/// Condensed QP of a linear plant with the given window.
pub fn condense(spec: &OcpSpec, x0: &Vector, window: &PreviewWindow) -> Result<QpForm, OcpError> {
    let lin = spec.model.as_linear().ok_or(OcpError::NotLinear)?;
    check_window(spec, window)?;
    if x0.len() != spec.model.n() {
        return Err(ModelError::DimensionMismatch {
            what: "state",
            expected: spec.model.n(),
            got: x0.len(),
        }
        .into());
    }
    let pred = AffinePrediction::linear(lin, window, &spec.weights.s);
    Ok(condense_prediction(spec, x0, &pred).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub u_seq: Vec<Vector>,
    pub x_seq: Vec<Vector>,
    pub value: f64,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    /// QP solves performed (1 for linear plants).
    pub passes: usize,
}

impl OcpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    pub fn terminal_state(&self) -> &Vector {
        self.x_seq.last().expect("trajectory has N + 1 states")
    }

    /// Tail of the optimal sequence followed by the terminal law at `x_N`.
    pub fn shifted_candidate(&self, k: &Matrix) -> Vec<Vector> {
        let mut u: Vec<Vector> = self.u_seq[1..].to_vec();
        u.push(k * self.terminal_state());
        u
    }
}

/// Horizon cost `Σ_{i<N} ‖xᵢ‖²_Q + ‖uᵢ‖²_R + ‖wᵢ‖²_S + ‖x_N‖²_P`, evaluated directly.
pub fn horizon_cost(
    weights: &CostWeights,
    p: &Matrix,
    x_seq: &[Vector],
    u_seq: &[Vector],
    w_seq: &[Vector],
) -> f64 {
    let mut v = 0.0;
    for i in 0..u_seq.len() {
        v += quad_form(&weights.q, &x_seq[i])
            + quad_form(&weights.r, &u_seq[i])
            + quad_form(&weights.s, &w_seq[i]);
    }
    v + quad_form(p, &x_seq[u_seq.len()])
}

fn split(u: &Vector, m: usize) -> Vec<Vector> {
    (0..u.len() / m)
        .map(|i| u.rows(i * m, m).into_owned())
        .collect()
}

fn stack(u_seq: &[Vector]) -> Vector {
    let m = u_seq.first().map_or(0, |u| u.len());
    let mut out = Vector::zeros(m * u_seq.len());
    for (i, u) in u_seq.iter().enumerate() {
        out.rows_mut(i * m, m).copy_from(u);
    }
    out
}

/// Solve the OCP for an explicit affine prediction. The trajectory is the
/// prediction's own rollout and the value is the QP objective.
pub fn solve_affine(
    spec: &OcpSpec,
    x0: &Vector,
    pred: &AffinePrediction,
) -> Result<OcpSolution, OcpError> {
    let (qp, _) = condense_prediction(spec, x0, pred);
    let sol = solve_qp(&qp)?;
    let u_seq = split(&sol.u, spec.model.m());
    let x_seq = pred.rollout(x0, &u_seq);
    Ok(OcpSolution {
        value: sol.value,
        u_seq,
        x_seq,
        status: sol.status,
        kkt_residual: sol.kkt_residual,
        passes: 1,
    })
}

fn rollout_model(
    model: &DynamicsModel,
    x0: &Vector,
    u_seq: &[Vector],
    window: &PreviewWindow,
) -> Result<Vec<Vector>, ModelError> {
    let mut xs = Vec::with_capacity(u_seq.len() + 1);
    xs.push(x0.clone());
    for i in 0..u_seq.len() {
        let next = step_dynamics(model, &xs[i], &u_seq[i], window.get(i))?;
        xs.push(next);
    }
    Ok(xs)
}

/// `V⁰_N(x0, window)` and its minimisers.
///
/// `warm` is the previous step's solution; for nonlinear plants its shifted
/// candidate seeds the first linearisation (zero inputs otherwise). The
/// linear path is warm-start independent.
pub fn solve_ocp(
    spec: &OcpSpec,
    x0: &Vector,
    window: &PreviewWindow,
    warm: Option<&OcpSolution>,
) -> Result<OcpSolution, OcpError> {
    check_window(spec, window)?;
    let model = &spec.model;
    if x0.len() != model.n() {
        return Err(ModelError::DimensionMismatch {
            what: "state",
            expected: model.n(),
            got: x0.len(),
        }
        .into());
    }
    if let Some(lin) = model.as_linear() {
        let pred = AffinePrediction::linear(lin, window, &spec.weights.s);
        let mut sol = solve_affine(spec, x0, &pred)?;
        sol.x_seq = rollout_model(model, x0, &sol.u_seq, window)?;
        sol.value = horizon_cost(
            &spec.weights,
            &spec.terminal.p,
            &sol.x_seq,
            &sol.u_seq,
            window.values(),
        );
        return Ok(sol);
    }

    // successive linearisation
    let m = model.m();
    let horizon = spec.horizon;
    let mut u_bar: Vec<Vector> = match warm {
        Some(prev) if prev.u_seq.len() == horizon && prev.x_seq.len() == horizon + 1 => {
            prev.shifted_candidate(&spec.terminal.k)
        }
        _ => vec![Vector::zeros(m); horizon],
    };
    let constant_cost: f64 = window
        .values()
        .iter()
        .map(|w| quad_form(&spec.weights.s, w))
        .sum();
    let mut last_kkt = f64::NAN;
    for pass in 1..=SL_MAX_PASSES {
        let x_bar = rollout_model(model, x0, &u_bar, window)?;
        let mut pred = AffinePrediction {
            a: Vec::with_capacity(horizon),
            b: Vec::with_capacity(horizon),
            c: Vec::with_capacity(horizon),
            input_offset: vec![Vector::zeros(m); horizon],
            constant_cost,
        };
        for i in 0..horizon {
            let jac = jacobian_linearize(model, &x_bar[i], &u_bar[i], window.get(i))?;
            // f(x̄,ū,w) + A(x − x̄) + B(u − ū)
            let c = &x_bar[i + 1] - &jac.a * &x_bar[i] - &jac.b * &u_bar[i];
            pred.a.push(jac.a);
            pred.b.push(jac.b);
            pred.c.push(c);
        }
        let (qp, _) = condense_prediction(spec, x0, &pred);
        let sol = solve_qp(&qp)?;
        last_kkt = sol.kkt_residual;
        if sol.status != QpStatus::Optimal {
            let x_seq = rollout_model(model, x0, &u_bar, window)?;
            return Ok(OcpSolution {
                value: horizon_cost(
                    &spec.weights,
                    &spec.terminal.p,
                    &x_seq,
                    &u_bar,
                    window.values(),
                ),
                u_seq: u_bar,
                x_seq,
                status: sol.status,
                kkt_residual: last_kkt,
                passes: pass,
            });
        }
        let change = (&sol.u - stack(&u_bar)).norm();
        u_bar = split(&sol.u, m);
        if change <= SL_TOL {
            let x_seq = rollout_model(model, x0, &u_bar, window)?;
            return Ok(OcpSolution {
                value: horizon_cost(
                    &spec.weights,
                    &spec.terminal.p,
                    &x_seq,
                    &u_bar,
                    window.values(),
                ),
                u_seq: u_bar,
                x_seq,
                status: QpStatus::Optimal,
                kkt_residual: last_kkt,
                passes: pass,
            });
        }
    }
    let x_seq = rollout_model(model, x0, &u_bar, window)?;
    Ok(OcpSolution {
        value: horizon_cost(
            &spec.weights,
            &spec.terminal.p,
            &x_seq,
            &u_bar,
            window.values(),
        ),
        u_seq: u_bar,
        x_seq,
        status: QpStatus::MaxIter,
        kkt_residual: last_kkt,
        passes: SL_MAX_PASSES,
    })
}

/// Largest violation of state, input and terminal constraints along a trajectory.
pub fn trajectory_violation(
    spec: &OcpSpec,
    x_seq: &[Vector],
    u_seq: &[Vector],
    input_offset: Option<&[Vector]>,
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for (i, u) in u_seq.iter().enumerate() {
        worst = worst.max(spec.x_set.max_violation(&x_seq[i]));
        let total = match input_offset {
            Some(off) => u + &off[i],
            None => u.clone(),
        };
        worst = worst.max(spec.u_set.max_violation(&total));
    }
    worst.max(spec.terminal.xf.max_violation(&x_seq[u_seq.len()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{synthesize, SynthesisOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn example_spec(horizon: usize) -> OcpSpec {
        let lin = LinearDynamics::new(
            Matrix::from_row_slice(2, 2, &[1., 1., 0., 1.]),
            Matrix::from_row_slice(2, 1, &[0.5, 1.]),
            Matrix::identity(2, 2),
        )
        .unwrap();
        let weights = CostWeights::new(
            Matrix::from_diagonal(&Vector::from_row_slice(&[10., 1.])),
            Matrix::identity(1, 1),
            Matrix::identity(2, 2),
        )
        .unwrap();
        let x = HPolytope::inf_ball(2, 1.0).unwrap();
        let u = HPolytope::inf_ball(1, 1.0).unwrap();
        let w = HPolytope::inf_ball(2, 0.1).unwrap();
        let (ing, _, _) =
            synthesize(&lin, &weights, &x, &u, &w, &SynthesisOptions::default()).unwrap();
        OcpSpec::certified(DynamicsModel::linear(lin), horizon, x, u, w, weights, ing).unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn window(spec: &OcpSpec, vals: &[[f64; 2]]) -> PreviewWindow {
        PreviewWindow::new(vals.iter().map(|w| v(w)).collect(), &spec.w_set).unwrap()
    }

    #[test]
    fn origin_needs_no_input() {
        let spec = example_spec(1);
        let qp = condense(&spec, &v(&[0., 0.]), &PreviewWindow::zeros(1, 2)).unwrap();
        assert!(qp.lin.amax() == 0.0);
        let sol = solve_ocp(&spec, &v(&[0., 0.]), &PreviewWindow::zeros(1, 2), None).unwrap();
        assert!(sol.u_seq[0].amax() < 1e-14);
        assert!(sol.value.abs() < 1e-14);
    }

    #[test]
    fn one_step_expansion_matches_symbolic_form() {
        // N = 1, x0 = 0, w = (0.1, 0): x₁ = B u + (0.1, 0)
        // V(u) = u² R + 0.1² S₁₁ + (Bu + c)ᵀP(Bu + c)
        let spec = example_spec(1);
        let qp = condense(&spec, &v(&[0., 0.]), &window(&spec, &[[0.1, 0.0]])).unwrap();
        let p = &spec.terminal.p;
        let b = v(&[0.5, 1.0]);
        let c = v(&[0.1, 0.0]);
        let hess = 2.0 * (1.0 + quad_form(p, &b));
        let lin = 2.0 * (b.transpose() * p * &c)[(0, 0)];
        let cst = 0.01 * 1.0 + quad_form(p, &c);
        assert!((qp.hess[(0, 0)] - hess).abs() < 1e-12);
        assert!((qp.lin[0] - lin).abs() < 1e-12);
        assert!((qp.const_term - cst).abs() < 1e-12);
    }

    #[test]
    fn objective_at_zero_input_equals_uncontrolled_rollout() {
        let spec = example_spec(5);
        let x0 = v(&[-0.3, 0.2]);
        let win = window(
            &spec,
            &[
                [0.1, 0.0],
                [0.0, -0.1],
                [0.05, 0.05],
                [-0.1, 0.02],
                [0.0, 0.0],
            ],
        );
        let qp = condense(&spec, &x0, &win).unwrap();
        let zeros = vec![v(&[0.]); 5];
        let xs = rollout_model(&spec.model, &x0, &zeros, &win).unwrap();
        let oracle = horizon_cost(&spec.weights, &spec.terminal.p, &xs, &zeros, win.values());
        assert!((qp.objective(&Vector::zeros(5)) - oracle).abs() < 1e-12);
    }

    #[test]
    fn value_bounded_by_terminal_cost_inside_terminal_set() {
        let spec = example_spec(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tested = 0;
        while tested < 20 {
            let x0 = Vector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
            if !spec.terminal.xf.contains_point(&x0) {
                continue;
            }
            tested += 1;
            let win = PreviewWindow::zeros(4, 2);
            let sol = solve_ocp(&spec, &x0, &win, None).unwrap();
            assert!(sol.is_optimal());
            // candidate uᵢ = Kxᵢ is feasible and bounded by V_f(x0)
            let mut xs = vec![x0.clone()];
            let mut us = Vec::new();
            for i in 0..4 {
                let u = &spec.terminal.k * &xs[i];
                xs.push(step_dynamics(&spec.model, &xs[i], &u, &Vector::zeros(2)).unwrap());
                us.push(u);
            }
            let candidate = horizon_cost(&spec.weights, &spec.terminal.p, &xs, &us, win.values());
            assert!(sol.value <= candidate + 1e-9);
            assert!(candidate <= spec.terminal.terminal_cost(&x0) + 1e-9);
        }
    }

    #[test]
    fn zero_window_equals_disturbance_free_problem() {
        let spec = example_spec(5);
        let x0 = v(&[-0.7, 0.4]);
        let with = solve_ocp(&spec, &x0, &PreviewWindow::zeros(5, 2), None).unwrap();
        let lin = spec.model.as_linear().unwrap();
        let plain = AffinePrediction {
            a: vec![lin.a.clone(); 5],
            b: vec![lin.b.clone(); 5],
            c: vec![Vector::zeros(2); 5],
            input_offset: vec![Vector::zeros(1); 5],
            constant_cost: 0.0,
        };
        let without = solve_affine(&spec, &x0, &plain).unwrap();
        for (a, b) in with.u_seq.iter().zip(&without.u_seq) {
            assert!((a - b).amax() <= 1e-7);
        }
        assert!(with.is_optimal());
    }

    #[test]
    fn preview_weight_shifts_value_only() {
        let spec = example_spec(3);
        let mut heavy = spec.clone();
        heavy.weights.s = Matrix::identity(2, 2) * 7.0;
        let x0 = v(&[0.4, -0.3]);
        let win = window(&spec, &[[0.1, -0.05], [0.02, 0.1], [-0.1, 0.0]]);
        let a = solve_ocp(&spec, &x0, &win, None).unwrap();
        let b = solve_ocp(&heavy, &x0, &win, None).unwrap();
        let shift: f64 = win.values().iter().map(|w| 6.0 * w.norm_squared()).sum();
        assert!((b.value - a.value - shift).abs() < 1e-10);
        for (ua, ub) in a.u_seq.iter().zip(&b.u_seq) {
            assert!((ua - ub).amax() <= 1e-9);
        }
    }

    #[test]
    fn solution_satisfies_its_contracts() {
        let spec = example_spec(5);
        let win = window(
            &spec,
            &[
                [0.1, 0.1],
                [0.1, -0.1],
                [-0.1, 0.1],
                [0.0, 0.05],
                [0.03, 0.0],
            ],
        );
        let x0 = v(&[-0.7, 0.4]);
        let sol = solve_ocp(&spec, &x0, &win, None).unwrap();
        assert!(sol.is_optimal());
        assert!(sol.kkt_residual <= 1e-7);
        assert!(trajectory_violation(&spec, &sol.x_seq, &sol.u_seq, None) <= 1e-7);
        let lin = spec.model.as_linear().unwrap();
        for i in 0..5 {
            let pred = &lin.a * &sol.x_seq[i] + &lin.b * &sol.u_seq[i] + &lin.bw * win.get(i);
            assert!((pred - &sol.x_seq[i + 1]).amax() <= 1e-9);
        }
        let (qp_value, _) = {
            let qp = condense(&spec, &x0, &win).unwrap();
            (qp.objective(&stack(&sol.u_seq)), ())
        };
        assert!((qp_value - sol.value).abs() <= 1e-8 * sol.value.abs().max(1.0));
    }

    #[test]
    fn state_outside_constraints_is_infeasible() {
        let spec = example_spec(3);
        let sol = solve_ocp(&spec, &v(&[1.5, 0.0]), &PreviewWindow::zeros(3, 2), None).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn window_contract_is_enforced() {
        let spec = example_spec(3);
        let err = solve_ocp(&spec, &v(&[0., 0.]), &PreviewWindow::zeros(2, 2), None).unwrap_err();
        assert!(matches!(err, OcpError::WindowLength { .. }));
        let bad = PreviewWindow::unchecked(vec![v(&[0.5, 0.0]); 3], 2).unwrap();
        let err = solve_ocp(&spec, &v(&[0., 0.]), &bad, None).unwrap_err();
        assert!(matches!(
            err,
            OcpError::Model(ModelError::OutsideDisturbanceSet { .. })
        ));
    }

    #[test]
    fn nonlinear_path_recovers_linear_solution() {
        // The linear plant wrapped as a black box must give the same answer
        // through successive linearisation.
        let spec = example_spec(4);
        let lin = spec.model.as_linear().unwrap().clone();
        let nl_model = DynamicsModel::nonlinear(2, 1, 2, move |x, u, w| {
            Ok(&lin.a * x + &lin.b * u + &lin.bw * w)
        });
        let mut nl = spec.clone();
        nl.model = nl_model;
        let x0 = v(&[-0.5, 0.3]);
        let win = window(&spec, &[[0.1, 0.0], [0.0, 0.1], [-0.05, 0.0], [0.0, 0.0]]);
        let a = solve_ocp(&spec, &x0, &win, None).unwrap();
        let b = solve_ocp(&nl, &x0, &win, None).unwrap();
        assert_eq!(b.status, QpStatus::Optimal);
        assert!(b.passes <= 3);
        for (ua, ub) in a.u_seq.iter().zip(&b.u_seq) {
            assert!((ua - ub).amax() < 1e-6);
        }
        assert!((a.value - b.value).abs() < 1e-6);
    }

    #[test]
    fn nonlinear_pendulum_converges() {
        let dt = 0.1;
        let model = DynamicsModel::nonlinear(2, 1, 2, move |x, u, w| {
            Ok(v(&[
                x[0] + dt * x[1] + w[0],
                x[1] + dt * (x[0].sin() - 0.1 * x[1] + u[0]) + w[1],
            ]))
        })
        .with_jacobians(move |x, _u, _w| {
            Ok((
                Matrix::from_row_slice(2, 2, &[1.0, dt, dt * x[0].cos(), 1.0 - 0.1 * dt]),
                Matrix::from_row_slice(2, 1, &[0.0, dt]),
                Matrix::identity(2, 2),
            ))
        });
        let lin = linearize_at_origin(&model).unwrap();
        let weights = CostWeights::new(
            Matrix::identity(2, 2),
            Matrix::identity(1, 1),
            Matrix::identity(2, 2),
        )
        .unwrap();
        let x = HPolytope::inf_ball(2, 1.0).unwrap();
        let u = HPolytope::inf_ball(1, 2.0).unwrap();
        let w = HPolytope::inf_ball(2, 0.005).unwrap();
        let (ing, _, _) =
            synthesize(&lin, &weights, &x, &u, &w, &SynthesisOptions::default()).unwrap();
        let spec = OcpSpec::new(model, 10, x, u, w, weights, ing).unwrap();
        let sol = solve_ocp(&spec, &v(&[0.3, 0.0]), &PreviewWindow::zeros(10, 2), None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let recomputed = horizon_cost(
            &spec.weights,
            &spec.terminal.p,
            &sol.x_seq,
            &sol.u_seq,
            &vec![Vector::zeros(2); 10],
        );
        assert!((recomputed - sol.value).abs() <= 1e-8 * sol.value.max(1.0));
    }
}
