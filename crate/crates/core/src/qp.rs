//! Strictly convex dense QP `min ½uᵀHu + fᵀu + c  s.t.  Au ≤ b`.
//!
//! Dual active-set method of Goldfarb and Idnani: start at the unconstrained
//! minimiser, repeatedly add the most violated constraint and take primal and
//! dual steps, dropping constraints whose multipliers would turn negative.
//! The Hessian is factored once (`H = LLᵀ`); the projection onto the active
//! constraints is refactored by QR of `L⁻¹N` at each step, which at these
//! sizes costs less than maintaining update formulas and is exact to
//! round-off. Everything is deterministic: ties are broken by lowest index.

use thiserror::Error;

use crate::linalg::{Matrix, Vector};

const VIOLATION_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-14;
const MULT_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotStrictlyConvex,
    #[error("dimension mismatch in {0}")]
    Dimension(&'static str),
}

/// Condensed QP: objective `½uᵀ·hess·u + linᵀu + const_term`, constraints `ineq_a·u ≤ ineq_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpForm {
    pub hess: Matrix,
    pub lin: Vector,
    pub const_term: f64,
    pub ineq_a: Matrix,
    pub ineq_b: Vector,
}

impl QpForm {
    pub fn n_vars(&self) -> usize {
        self.lin.len()
    }

    pub fn objective(&self, u: &Vector) -> f64 {
        0.5 * (u.transpose() * &self.hess * u)[(0, 0)] + self.lin.dot(u) + self.const_term
    }

    /// `max(Au − b)⁺`.
    pub fn max_violation(&self, u: &Vector) -> f64 {
        (&self.ineq_a * u - &self.ineq_b)
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "Optimal",
            QpStatus::Infeasible => "Infeasible",
            QpStatus::MaxIter => "MaxIter",
        }
    }
}

/// Individual KKT residuals at the returned point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vector,
    pub value: f64,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub kkt: KktResiduals,
    /// Multipliers `λ ≥ 0` with `Hu + f + Aᵀλ = 0`.
    pub multipliers: Vector,
    pub active_set: Vec<usize>,
    pub iterations: usize,
}

pub fn kkt_residuals(qp: &QpForm, u: &Vector, lambda: &Vector) -> KktResiduals {
    let grad = &qp.hess * u + &qp.lin + qp.ineq_a.transpose() * lambda;
    let slack = &qp.ineq_b - &qp.ineq_a * u;
    KktResiduals {
        stationarity: if grad.is_empty() { 0.0 } else { grad.amax() },
        primal: slack.iter().map(|&s| (-s).max(0.0)).fold(0.0, f64::max),
        dual: lambda.iter().map(|&l| (-l).max(0.0)).fold(0.0, f64::max),
        complementarity: lambda
            .iter()
            .zip(slack.iter())
            .map(|(l, s)| (l * s).abs())
            .fold(0.0, f64::max),
    }
}

/// Solve the QP; infeasibility and iteration exhaustion are reported in the status.
pub fn solve_qp(qp: &QpForm) -> Result<QpSolution, QpError> {
    let n = qp.n_vars();
    let rows = qp.ineq_b.len();
    if qp.hess.nrows() != n || qp.hess.ncols() != n {
        return Err(QpError::Dimension("hessian"));
    }
    if qp.ineq_a.nrows() != rows || (rows > 0 && qp.ineq_a.ncols() != n) {
        return Err(QpError::Dimension("constraints"));
    }
    let chol = crate::linalg::symmetrize(&qp.hess)
        .cholesky()
        .ok_or(QpError::NotStrictlyConvex)?;
    let l = chol.l();
    let lt = l.transpose();
    let linv = |v: &Vector| -> Vector {
        l.solve_lower_triangular(v)
            .expect("Cholesky factor is nonsingular")
    };
    let ltinv = |v: &Vector| -> Vector {
        lt.solve_upper_triangular(v)
            .expect("Cholesky factor is nonsingular")
    };

    let mut u = -chol.solve(&qp.lin);
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let cap = 10 * (rows + n).max(1);
    let mut iterations = 0;
    let row_norm: Vec<f64> = (0..rows).map(|i| qp.ineq_a.row(i).norm()).collect();

    let finish =
        |u: Vector, active: &[usize], mult: &[f64], status: QpStatus, iterations: usize| {
            let mut lambda = Vector::zeros(rows);
            for (&i, &m) in active.iter().zip(mult) {
                lambda[i] = m;
            }
            let kkt = kkt_residuals(qp, &u, &lambda);
            QpSolution {
                value: qp.objective(&u),
                u,
                status,
                kkt_residual: kkt.max(),
                kkt,
                multipliers: lambda,
                active_set: active.to_vec(),
                iterations,
            }
        };

    'outer: loop {
        // most violated inactive constraint, scaled by row norm
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..rows {
            if active.contains(&i) {
                continue;
            }
            let s = qp.ineq_b[i] - qp.ineq_a.row(i).dot(&u.transpose());
            let tol = VIOLATION_TOL * (1.0 + qp.ineq_b[i].abs()).max(row_norm[i]);
            if s < -tol {
                let scaled = s / row_norm[i].max(1e-300);
                if pick.is_none_or(|(_, best)| scaled < best) {
                    pick = Some((i, scaled));
                }
            }
        }
        let Some((p, _)) = pick else {
            return Ok(finish(u, &active, &mult, QpStatus::Optimal, iterations));
        };
        // in GI form the constraint reads n_pᵀu ≥ b̃_p with n_p = −A_pᵀ
        let np = -qp.ineq_a.row(p).transpose();
        let bp = -qp.ineq_b[p];
        let mut mult_p = 0.0;

        loop {
            iterations += 1;
            if iterations > cap {
                return Ok(finish(u, &active, &mult, QpStatus::MaxIter, iterations));
            }
            let d = linv(&np);
            let (z, r) = if active.is_empty() {
                (ltinv(&d), Vector::zeros(0))
            } else {
                let mut nb = Matrix::zeros(n, active.len());
                for (c, &j) in active.iter().enumerate() {
                    nb.set_column(c, &linv(&(-qp.ineq_a.row(j).transpose())));
                }
                let qr = nb.qr();
                let q1 = qr.q();
                let r1 = qr.r();
                let proj = q1.transpose() * &d;
                let z = ltinv(&(&d - &q1 * &proj));
                let r = r1
                    .solve_upper_triangular(&proj)
                    .unwrap_or_else(|| Vector::zeros(active.len()));
                (z, r)
            };

            // dual step length: first multiplier to hit zero
            let mut t1: Option<(usize, f64)> = None;
            for (c, &rc) in r.iter().enumerate() {
                if rc > MULT_TOL {
                    let t = mult[c] / rc;
                    if t1.is_none_or(|(_, best)| t < best) {
                        t1 = Some((c, t));
                    }
                }
            }
            let zn = z.dot(&np);
            if zn <= STEP_TOL * d.norm_squared().max(1e-300) {
                // no primal progress possible along the new constraint
                let Some((k, t)) = t1 else {
                    return Ok(finish(u, &active, &mult, QpStatus::Infeasible, iterations));
                };
                for c in 0..mult.len() {
                    mult[c] -= t * r[c];
                }
                mult_p += t;
                active.remove(k);
                mult.remove(k);
                continue;
            }
            let t2 = (bp - np.dot(&u)) / zn;
            match t1 {
                Some((k, t)) if t < t2 => {
                    u += &z * t;
                    for c in 0..mult.len() {
                        mult[c] -= t * r[c];
                    }
                    mult_p += t;
                    active.remove(k);
                    mult.remove(k);
                }
                _ => {
                    u += &z * t2;
                    for c in 0..mult.len() {
                        mult[c] = (mult[c] - t2 * r[c]).max(0.0);
                    }
                    mult_p += t2;
                    active.push(p);
                    mult.push(mult_p);
                    continue 'outer;
                }
            }
        }
    }
}
