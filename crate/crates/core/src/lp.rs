//! Dense two-phase simplex for `max cᵀx s.t. Hx ≤ g` with `x` free.
//!
//! Problems here are tiny (a handful of variables, at most a few hundred
//! rows), so the kernel is a plain tableau method with Bland's rule for
//! anti-cycling. Once an optimal basis is found the primal and dual vectors
//! are recomputed from the original data by an LU solve of the basis, which
//! keeps the reported KKT residuals at round-off level.

use crate::linalg::{Matrix, Vector};

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

/// `maximize cᵀx subject to Hx ≤ g`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub c: Vector,
    pub h: Matrix,
    pub g: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
    IterationLimit,
}

/// Residuals of the optimality conditions of the primal/dual pair
/// `max cᵀx, Hx ≤ g` and `min gᵀy, Hᵀy = c, y ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LpResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl LpResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point. Optimal: the maximiser. Unbounded: a feasible point.
    pub x: Vector,
    /// Dual multipliers `y ≥ 0`, meaningful only when optimal.
    pub dual: Vector,
    pub value: f64,
    pub residuals: LpResiduals,
    pub pivots: usize,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `(rows + 1) × (cols + 1)`, row-major; last row holds reduced costs
    /// `z_j − c_j`; last column holds the right-hand side.
    t: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

enum SimplexOutcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.cols + 1;
        let p = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        self.t[r * w + c] = 1.0;
        for i in 0..=self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c];
            if f != 0.0 {
                for j in 0..w {
                    self.t[i * w + j] -= f * self.t[r * w + j];
                }
                self.t[i * w + c] = 0.0;
            }
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Install objective `max Σ cost_j y_j` in the last row for the current basis.
    fn set_objective(&mut self, cost: &[f64]) {
        let w = self.cols + 1;
        let obj = self.rows * w;
        for j in 0..w {
            let mut z = 0.0;
            for i in 0..self.rows {
                let cb = cost[self.basis[i]];
                if cb != 0.0 {
                    z += cb * self.t[i * w + j];
                }
            }
            self.t[obj + j] = if j < self.cols { z - cost[j] } else { z };
        }
    }

    fn run(&mut self, allowed: &[bool]) -> SimplexOutcome {
        loop {
            if self.pivots >= MAX_PIVOTS {
                return SimplexOutcome::IterationLimit;
            }
            // Bland: lowest-index improving column.
            let entering =
                (0..self.cols).find(|&j| allowed[j] && self.at(self.rows, j) < -COST_TOL);
            let Some(c) = entering else {
                return SimplexOutcome::Optimal;
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12 * (1.0 + br.abs())
                                || (ratio <= br + 1e-12 * (1.0 + br.abs())
                                    && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                Some((r, _)) => self.pivot(r, c),
                None => return SimplexOutcome::Unbounded,
            }
        }
    }
}

/// Solve `max cᵀx s.t. Hx ≤ g`.
pub fn solve_lp(lp: &LpProblem) -> LpSolution {
    let d = lp.h.ncols();
    let p = lp.h.nrows();
    assert_eq!(lp.c.len(), d, "objective length must match H columns");
    assert_eq!(lp.g.len(), p, "rhs length must match H rows");

    let flipped: Vec<bool> = lp.g.iter().map(|&gi| gi < 0.0).collect();
    let n_art = flipped.iter().filter(|&&f| f).count();
    let cols = 2 * d + p + n_art;
    let w = cols + 1;
    let mut t = vec![0.0; (p + 1) * w];
    let mut basis = vec![0; p];
    let mut art = 2 * d + p;
    for i in 0..p {
        let s = if flipped[i] { -1.0 } else { 1.0 };
        for j in 0..d {
            t[i * w + j] = s * lp.h[(i, j)];
            t[i * w + d + j] = -s * lp.h[(i, j)];
        }
        t[i * w + 2 * d + i] = s;
        t[i * w + cols] = s * lp.g[i];
        if flipped[i] {
            t[i * w + art] = 1.0;
            basis[i] = art;
            art += 1;
        } else {
            basis[i] = 2 * d + i;
        }
    }
    let mut tab = Tableau {
        rows: p,
        cols,
        t,
        basis,
        pivots: 0,
    };
    let is_art = |j: usize| j >= 2 * d + p;

    if n_art > 0 {
        let mut cost = vec![0.0; cols];
        for c in cost.iter_mut().skip(2 * d + p) {
            *c = -1.0;
        }
        tab.set_objective(&cost);
        let allowed = vec![true; cols];
        if let SimplexOutcome::IterationLimit = tab.run(&allowed) {
            return failed(LpStatus::IterationLimit, d, p, tab.pivots);
        }
        if tab.at(p, cols) < -FEAS_TOL {
            return failed(LpStatus::Infeasible, d, p, tab.pivots);
        }
        // Drive zero-level artificials out of the basis where possible; rows
        // where that is impossible are redundant and keep their artificial.
        for i in 0..p {
            if is_art(tab.basis[i]) {
                if let Some(j) = (0..2 * d + p).find(|&j| tab.at(i, j).abs() > 1e-9) {
                    tab.pivot(i, j);
                }
            }
        }
    }

    let mut cost = vec![0.0; cols];
    for j in 0..d {
        cost[j] = lp.c[j];
        cost[d + j] = -lp.c[j];
    }
    tab.set_objective(&cost);
    let allowed: Vec<bool> = (0..cols).map(|j| !is_art(j)).collect();
    let outcome = tab.run(&allowed);

    let mut x = Vector::zeros(d);
    for i in 0..p {
        let b = tab.basis[i];
        if b < d {
            x[b] += tab.rhs(i);
        } else if b < 2 * d {
            x[b - d] -= tab.rhs(i);
        }
    }
    match outcome {
        SimplexOutcome::IterationLimit => failed(LpStatus::IterationLimit, d, p, tab.pivots),
        SimplexOutcome::Unbounded => LpSolution {
            status: LpStatus::Unbounded,
            value: f64::INFINITY,
            residuals: LpResiduals {
                primal: primal_residual(lp, &x),
                ..Default::default()
            },
            x,
            dual: Vector::zeros(p),
            pivots: tab.pivots,
        },
        SimplexOutcome::Optimal => {
            let mut dual = Vector::from_fn(p, |i, _| tab.at(p, 2 * d + i));
            if let Some((xp, yp)) = polish(lp, &tab, &flipped) {
                x = xp;
                dual = yp;
            }
            let value = lp.c.dot(&x);
            let residuals = residuals(lp, &x, &dual);
            LpSolution {
                status: LpStatus::Optimal,
                x,
                dual,
                value,
                residuals,
                pivots: tab.pivots,
            }
        }
    }
}

fn failed(status: LpStatus, d: usize, p: usize, pivots: usize) -> LpSolution {
    LpSolution {
        status,
        x: Vector::zeros(d),
        dual: Vector::zeros(p),
        value: f64::NAN,
        residuals: LpResiduals::default(),
        pivots,
    }
}

/// Column `j` of the (row-flipped) equality system used by the tableau.
fn column(lp: &LpProblem, flipped: &[bool], j: usize) -> Vector {
    let d = lp.h.ncols();
    let p = lp.h.nrows();
    let mut col = Vector::zeros(p);
    for i in 0..p {
        let s = if flipped[i] { -1.0 } else { 1.0 };
        col[i] = if j < d {
            s * lp.h[(i, j)]
        } else if j < 2 * d {
            -s * lp.h[(i, j - d)]
        } else if j < 2 * d + p {
            if j - 2 * d == i {
                s
            } else {
                0.0
            }
        } else {
            0.0
        };
    }
    if j >= 2 * d + p {
        // artificial: identify its row by order of flipped rows
        let k = j - 2 * d - p;
        if let Some(row) = flipped
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| i)
            .nth(k)
        {
            col[row] = 1.0;
        }
    }
    col
}

/// Recompute the basic solution and duals from the original data.
fn polish(lp: &LpProblem, tab: &Tableau, flipped: &[bool]) -> Option<(Vector, Vector)> {
    let d = lp.h.ncols();
    let p = lp.h.nrows();
    if p == 0 {
        return Some((Vector::zeros(d), Vector::zeros(0)));
    }
    let mut basis_mat = Matrix::zeros(p, p);
    let mut c_b = Vector::zeros(p);
    for (k, &j) in tab.basis.iter().enumerate() {
        basis_mat.set_column(k, &column(lp, flipped, j));
        c_b[k] = if j < d {
            lp.c[j]
        } else if j < 2 * d {
            -lp.c[j - d]
        } else {
            0.0
        };
    }
    let rhs = Vector::from_fn(p, |i, _| if flipped[i] { -lp.g[i] } else { lp.g[i] });
    let lu = basis_mat.clone().lu();
    let vals = lu.solve(&rhs)?;
    let pi = basis_mat.transpose().lu().solve(&c_b)?;
    if vals.iter().chain(pi.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    let mut x = Vector::zeros(d);
    for (k, &j) in tab.basis.iter().enumerate() {
        if j < d {
            x[j] += vals[k];
        } else if j < 2 * d {
            x[j - d] -= vals[k];
        }
    }
    let y = Vector::from_fn(p, |i, _| if flipped[i] { -pi[i] } else { pi[i] });
    Some((x, y))
}

fn primal_residual(lp: &LpProblem, x: &Vector) -> f64 {
    let r = &lp.h * x - &lp.g;
    r.iter().copied().fold(0.0, f64::max)
}

fn residuals(lp: &LpProblem, x: &Vector, y: &Vector) -> LpResiduals {
    let primal = primal_residual(lp, x);
    let stat = lp.h.transpose() * y - &lp.c;
    let neg = y.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
    let dual = stat.amax().max(neg);
    let slack = &lp.g - &lp.h * x;
    let complementarity = y
        .iter()
        .zip(slack.iter())
        .map(|(a, b)| (a * b).abs())
        .fold(0.0, f64::max);
    LpResiduals {
        primal,
        dual,
        complementarity,
    }
}

/// Whether `{x : Hx ≤ g}` is nonempty (phase-one test).
pub fn is_feasible(h: &Matrix, g: &Vector) -> bool {
    let lp = LpProblem {
        c: Vector::zeros(h.ncols()),
        h: h.clone(),
        g: g.clone(),
    };
    matches!(solve_lp(&lp).status, LpStatus::Optimal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_box(d: usize, r: f64) -> (Matrix, Vector) {
        let mut h = Matrix::zeros(2 * d, d);
        for i in 0..d {
            h[(2 * i, i)] = 1.0;
            h[(2 * i + 1, i)] = -1.0;
        }
        (h, Vector::from_element(2 * d, r))
    }

    #[test]
    fn box_support() {
        let (h, g) = unit_box(2, 1.0);
        let sol = solve_lp(&LpProblem {
            c: Vector::from_row_slice(&[1.0, 0.0]),
            h,
            g,
        });
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.value - 1.0).abs() < 1e-12);
        assert!(sol.residuals.max() <= 1e-9);
    }

    #[test]
    fn triangle_needs_phase_one() {
        // x ≥ 0.2, y ≥ 0.1, x + y ≤ 1: negative right-hand sides
        let h = Matrix::from_row_slice(3, 2, &[-1., 0., 0., -1., 1., 1.]);
        let g = Vector::from_row_slice(&[-0.2, -0.1, 1.0]);
        let sol = solve_lp(&LpProblem {
            c: Vector::from_row_slice(&[1.0, 0.0]),
            h,
            g,
        });
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.value - 0.9).abs() < 1e-12);
        assert!(sol.residuals.max() <= 1e-9, "{:?}", sol.residuals);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let h = Matrix::from_row_slice(2, 1, &[1., -1.]);
        let inf = solve_lp(&LpProblem {
            c: Vector::from_row_slice(&[1.0]),
            h: h.clone(),
            g: Vector::from_row_slice(&[-1.0, -1.0]),
        });
        assert_eq!(inf.status, LpStatus::Infeasible);
        let unb = solve_lp(&LpProblem {
            c: Vector::from_row_slice(&[-1.0]),
            h: Matrix::from_row_slice(1, 1, &[1.0]),
            g: Vector::from_row_slice(&[1.0]),
        });
        assert_eq!(unb.status, LpStatus::Unbounded);
        assert!(is_feasible(&h, &Vector::from_row_slice(&[0.0, 0.0])));
    }

    #[test]
    fn no_constraints() {
        let sol = solve_lp(&LpProblem {
            c: Vector::zeros(2),
            h: Matrix::zeros(0, 2),
            g: Vector::zeros(0),
        });
        assert_eq!(sol.status, LpStatus::Optimal);
        let sol = solve_lp(&LpProblem {
            c: Vector::from_row_slice(&[1.0, 0.0]),
            h: Matrix::zeros(0, 2),
            g: Vector::zeros(0),
        });
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn degenerate_duplicate_rows() {
        let h = Matrix::from_row_slice(5, 2, &[1., 0., 1., 0., -1., 0., 0., 1., 0., -1.]);
        let g = Vector::from_row_slice(&[1., 1., 1., 1., 1.]);
        let sol = solve_lp(&LpProblem {
            c: Vector::from_row_slice(&[1.0, 1.0]),
            h,
            g,
        });
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.value - 2.0).abs() < 1e-12);
        assert!(sol.residuals.max() <= 1e-9);
    }

    proptest! {
        #[test]
        fn certificates_on_random_bounded_problems(
            d in 1usize..5,
            extra in prop::collection::vec(prop::collection::vec(-1f64..1.0, 5), 0..12),
            offsets in prop::collection::vec(-0.3f64..1.0, 12),
            c in prop::collection::vec(-1f64..1.0, 5),
        ) {
            let (bh, bg) = unit_box(d, 2.0);
            let rows = bh.nrows() + extra.len();
            let mut h = Matrix::zeros(rows, d);
            let mut g = Vector::zeros(rows);
            h.rows_mut(0, bh.nrows()).copy_from(&bh);
            g.rows_mut(0, bh.nrows()).copy_from(&bg);
            for (k, row) in extra.iter().enumerate() {
                for j in 0..d {
                    h[(bh.nrows() + k, j)] = row[j];
                }
                g[bh.nrows() + k] = offsets[k];
            }
            let sol = solve_lp(&LpProblem { c: Vector::from_fn(d, |i, _| c[i]), h, g });
            match sol.status {
                LpStatus::Optimal => prop_assert!(sol.residuals.max() <= 1e-9, "{:?}", sol.residuals),
                LpStatus::Infeasible => {}
                s => prop_assert!(false, "unexpected status {:?}", s),
            }
        }
    }
}
