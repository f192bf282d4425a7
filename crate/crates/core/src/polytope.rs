//! Halfspace polytopes `{x : Hx ≤ g}` and the set algebra the terminal set
//! iteration needs.
//!
//! Rows are normalised to unit Euclidean norm on construction, so the
//! absolute tolerance [`SET_TOL`] on support values is a distance. Empty sets
//! are ordinary values carrying an emptiness flag.

use thiserror::Error;

use crate::linalg::{Matrix, Vector};
use crate::lp::{self, LpProblem, LpStatus};

/// Tolerance on support values in every set comparison.
pub const SET_TOL: f64 = 1e-9;
/// Tolerance of point membership tests `Hx ≤ g + tol`.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

const ZERO_ROW: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolytopeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite polytope data")]
    NotFinite,
    #[error("box bounds are inverted at coordinate {0}")]
    InvertedBox(usize),
    #[error("set is unbounded in a direction that was required to be bounded")]
    Unbounded,
    #[error("operation requires a nonempty set")]
    EmptyOperand,
    #[error("linear program hit its pivot limit")]
    LpFailure,
}

/// Value of a support function `max_{x ∈ set} dirᵀx`.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Finite { value: f64, point: Vector },
    Unbounded,
    Infeasible,
}

impl Support {
    pub fn value(&self) -> Option<f64> {
        match self {
            Support::Finite { value, .. } => Some(*value),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    h: Matrix,
    g: Vector,
    empty: bool,
}

impl HPolytope {
    /// Normalise rows, drop zero rows that hold trivially and flag emptiness.
    pub fn new(h: Matrix, g: Vector) -> Result<Self, PolytopeError> {
        if h.nrows() != g.len() {
            return Err(PolytopeError::DimensionMismatch {
                expected: h.nrows(),
                got: g.len(),
            });
        }
        if h.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(PolytopeError::NotFinite);
        }
        let d = h.ncols();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(h.nrows());
        for i in 0..h.nrows() {
            let norm = h.row(i).norm();
            if norm <= ZERO_ROW {
                if g[i] < -MEMBERSHIP_TOL {
                    return Ok(Self::empty(d));
                }
                continue;
            }
            rows.push((h.row(i).iter().map(|v| v / norm).collect(), g[i] / norm));
        }
        let h = Matrix::from_fn(rows.len(), d, |i, j| rows[i].0[j]);
        let g = Vector::from_fn(rows.len(), |i, _| rows[i].1);
        let empty = !lp::is_feasible(&h, &g);
        Ok(Self { h, g, empty })
    }

    /// `{x : lo ≤ x ≤ hi}`.
    pub fn from_box(lo: &Vector, hi: &Vector) -> Result<Self, PolytopeError> {
        if lo.len() != hi.len() {
            return Err(PolytopeError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        let d = lo.len();
        if let Some(i) = (0..d).find(|&i| lo[i] > hi[i]) {
            return Err(PolytopeError::InvertedBox(i));
        }
        let mut h = Matrix::zeros(2 * d, d);
        let mut g = Vector::zeros(2 * d);
        for i in 0..d {
            h[(2 * i, i)] = 1.0;
            g[2 * i] = hi[i];
            h[(2 * i + 1, i)] = -1.0;
            g[2 * i + 1] = -lo[i];
        }
        Self::new(h, g)
    }

    /// `{x : ‖x‖∞ ≤ r}`.
    pub fn inf_ball(d: usize, r: f64) -> Result<Self, PolytopeError> {
        Self::from_box(&Vector::from_element(d, -r), &Vector::from_element(d, r))
    }

    /// The singleton `{0}`.
    pub fn origin(d: usize) -> Self {
        Self::inf_ball(d, 0.0).expect("degenerate box is valid")
    }

    pub fn whole_space(d: usize) -> Self {
        Self {
            h: Matrix::zeros(0, d),
            g: Vector::zeros(0),
            empty: false,
        }
    }

    /// Canonical empty set `{x₁ ≤ −1, −x₁ ≤ −1}`.
    pub fn empty(d: usize) -> Self {
        let mut h = Matrix::zeros(2, d);
        if d > 0 {
            h[(0, 0)] = 1.0;
            h[(1, 0)] = -1.0;
        }
        Self {
            h,
            g: Vector::from_element(2, -1.0),
            empty: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn n_constraints(&self) -> usize {
        self.h.nrows()
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn g(&self) -> &Vector {
        &self.g
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    /// `max(Hx − g)`, or `−∞` with no rows.
    pub fn max_violation(&self, x: &Vector) -> f64 {
        if self.empty {
            return f64::INFINITY;
        }
        (&self.h * x - &self.g)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains_point(&self, x: &Vector) -> bool {
        x.len() == self.dim() && self.max_violation(x) <= MEMBERSHIP_TOL
    }

    /// Smallest row offset, i.e. distance from the origin to the nearest face.
    pub fn origin_margin(&self) -> f64 {
        if self.empty {
            return f64::NEG_INFINITY;
        }
        self.g.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Support finite along `±eⱼ` for every axis.
    pub fn is_bounded(&self) -> bool {
        if self.empty {
            return true;
        }
        (0..self.dim()).all(|j| {
            [1.0, -1.0].iter().all(|&s| {
                let mut e = Vector::zeros(self.dim());
                e[j] = s;
                matches!(self.support(&e), Support::Finite { .. })
            })
        })
    }

    /// `max_{x ∈ self} dirᵀx` together with a maximiser.
    pub fn support(&self, dir: &Vector) -> Support {
        assert_eq!(dir.len(), self.dim(), "support direction dimension");
        if self.empty {
            return Support::Infeasible;
        }
        let sol = lp::solve_lp(&LpProblem {
            c: dir.clone(),
            h: self.h.clone(),
            g: self.g.clone(),
        });
        match sol.status {
            LpStatus::Optimal => Support::Finite {
                value: sol.value,
                point: sol.x,
            },
            LpStatus::Unbounded => Support::Unbounded,
            LpStatus::Infeasible => Support::Infeasible,
            LpStatus::IterationLimit => {
                log::warn!("support LP hit the pivot limit; reporting unbounded");
                Support::Unbounded
            }
        }
    }

    /// Support value that must be finite.
    pub fn support_value(&self, dir: &Vector) -> Result<f64, PolytopeError> {
        match self.support(dir) {
            Support::Finite { value, .. } => Ok(value),
            Support::Unbounded => Err(PolytopeError::Unbounded),
            Support::Infeasible => Err(PolytopeError::EmptyOperand),
        }
    }

    /// Support of the linear image `M·self` in `dir` (= support of self in `Mᵀdir`).
    pub fn image_support(&self, map: &Matrix, dir: &Vector) -> Result<f64, PolytopeError> {
        self.support_value(&(map.transpose() * dir))
    }

    /// Boundary vertices of a 2-D set from a 1° support sweep, in
    /// counter-clockwise order with duplicates removed. Directions sit at
    /// half-degree offsets so axis-aligned faces never tie.
    pub fn boundary_vertices_2d(&self) -> Result<Vec<[f64; 2]>, PolytopeError> {
        if self.dim() != 2 {
            return Err(PolytopeError::DimensionMismatch {
                expected: 2,
                got: self.dim(),
            });
        }
        let mut out: Vec<[f64; 2]> = Vec::new();
        for deg in 0..360 {
            let t = (deg as f64 + 0.5).to_radians();
            let dir = Vector::from_row_slice(&[t.cos(), t.sin()]);
            match self.support(&dir) {
                Support::Finite { point, .. } => {
                    let p = [point[0], point[1]];
                    let dup = out
                        .iter()
                        .any(|q| (q[0] - p[0]).abs() <= 1e-9 && (q[1] - p[1]).abs() <= 1e-9);
                    if !dup {
                        out.push(p);
                    }
                }
                Support::Unbounded => return Err(PolytopeError::Unbounded),
                Support::Infeasible => return Err(PolytopeError::EmptyOperand),
            }
        }
        Ok(out)
    }

    fn check_dim(&self, d: usize) -> Result<(), PolytopeError> {
        if self.dim() != d {
            return Err(PolytopeError::DimensionMismatch {
                expected: d,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

/// `{x : Hx ≤ g − s}` with `sᵢ = support(sub, mapᵀHᵢᵀ)`, the set of points
/// `x` with `x ⊕ map·sub ⊆ set`.
pub fn pontryagin_difference(
    set: &HPolytope,
    sub: &HPolytope,
    map: &Matrix,
) -> Result<HPolytope, PolytopeError> {
    if map.nrows() != set.dim() {
        return Err(PolytopeError::DimensionMismatch {
            expected: set.dim(),
            got: map.nrows(),
        });
    }
    sub.check_dim(map.ncols())?;
    if sub.is_empty() {
        return Err(PolytopeError::EmptyOperand);
    }
    if set.is_empty() {
        return Ok(set.clone());
    }
    let mut g = set.g.clone();
    for i in 0..set.n_constraints() {
        let hi = set.h.row(i).transpose();
        g[i] -= sub.image_support(map, &hi)?;
    }
    HPolytope::new(set.h.clone(), g)
}

/// `a ∩ b` with redundant rows removed.
pub fn intersect(a: &HPolytope, b: &HPolytope) -> Result<HPolytope, PolytopeError> {
    b.check_dim(a.dim())?;
    let d = a.dim();
    if a.is_empty() || b.is_empty() {
        return Ok(HPolytope::empty(d));
    }
    let (pa, pb) = (a.n_constraints(), b.n_constraints());
    let mut h = Matrix::zeros(pa + pb, d);
    let mut g = Vector::zeros(pa + pb);
    h.rows_mut(0, pa).copy_from(&a.h);
    h.rows_mut(pa, pb).copy_from(&b.h);
    g.rows_mut(0, pa).copy_from(&a.g);
    g.rows_mut(pa, pb).copy_from(&b.g);
    Ok(remove_redundancy(&HPolytope::new(h, g)?))
}

/// `{x : M x ∈ set}` = `{x : (H M) x ≤ g}`, without redundancy removal.
pub fn affine_preimage(set: &HPolytope, map: &Matrix) -> Result<HPolytope, PolytopeError> {
    if map.nrows() != set.dim() {
        return Err(PolytopeError::DimensionMismatch {
            expected: set.dim(),
            got: map.nrows(),
        });
    }
    if set.is_empty() {
        return Ok(HPolytope::empty(map.ncols()));
    }
    HPolytope::new(&set.h * map, set.g.clone())
}

/// Drop every row whose removal leaves the set unchanged.
///
/// Rows are visited in order; a row is kept when the support of the set
/// without it exceeds its offset by more than [`SET_TOL`]. Of duplicated rows
/// the last copy survives.
pub fn remove_redundancy(set: &HPolytope) -> HPolytope {
    if set.is_empty() || set.n_constraints() == 0 {
        return set.clone();
    }
    let p = set.n_constraints();
    let d = set.dim();
    let mut keep = vec![true; p];
    for i in 0..p {
        let others: Vec<usize> = (0..p).filter(|&j| j != i && keep[j]).collect();
        let h = Matrix::from_fn(others.len(), d, |r, c| set.h[(others[r], c)]);
        let g = Vector::from_fn(others.len(), |r, _| set.g[others[r]]);
        let sol = lp::solve_lp(&LpProblem {
            c: set.h.row(i).transpose(),
            h,
            g,
        });
        let redundant = match sol.status {
            LpStatus::Optimal => sol.value <= set.g[i] + SET_TOL,
            _ => false,
        };
        if redundant {
            keep[i] = false;
        }
    }
    let idx: Vec<usize> = (0..p).filter(|&i| keep[i]).collect();
    HPolytope {
        h: Matrix::from_fn(idx.len(), d, |r, c| set.h[(idx[r], c)]),
        g: Vector::from_fn(idx.len(), |r, _| set.g[idx[r]]),
        empty: false,
    }
}

/// `b ⊆ a`, tested row by row on `a` with tolerance [`SET_TOL`].
pub fn contains(a: &HPolytope, b: &HPolytope) -> bool {
    if a.dim() != b.dim() {
        return false;
    }
    if b.is_empty() {
        return true;
    }
    if a.is_empty() {
        return false;
    }
    (0..a.n_constraints()).all(|i| match b.support(&a.h.row(i).transpose()) {
        Support::Finite { value, .. } => value <= a.g[i] + SET_TOL,
        _ => false,
    })
}

/// Support of the Minkowski sum `Σ mapᵢ·setᵢ` in `dir`.
pub fn minkowski_support(
    terms: &[(&HPolytope, &Matrix)],
    dir: &Vector,
) -> Result<f64, PolytopeError> {
    terms
        .iter()
        .map(|(set, map)| set.image_support(map, dir))
        .sum()
}
