//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Complex, DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Eigenvalues of a (numerically) symmetric matrix, symmetrised first.
pub fn sym_eigenvalues(m: &Matrix) -> Vector {
    let s = symmetrize(m);
    s.symmetric_eigen().eigenvalues
}

pub fn sym_eig_min(m: &Matrix) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn sym_eig_max(m: &Matrix) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Matrix, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Moore–Penrose pseudo-inverse.
pub fn pinv(m: &Matrix) -> Matrix {
    let eps = 1e-12 * spectral_norm(m).max(1.0);
    m.clone()
        .pseudo_inverse(eps)
        .expect("pseudo-inverse with non-negative epsilon")
}

/// Numerical rank of a complex matrix from its singular values.
pub fn complex_rank(m: &DMatrix<Complex<f64>>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let cutoff = tol * smax.max(1.0);
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Weighted squared norm `xᵀ W x`.
pub fn quad_form(w: &Matrix, x: &Vector) -> f64 {
    (x.transpose() * w * x)[(0, 0)]
}

pub fn matrix_power(m: &Matrix, k: usize) -> Matrix {
    let mut out = Matrix::identity(m.nrows(), m.ncols());
    for _ in 0..k {
        out = &out * m;
    }
    out
}

/// Row-major nested vectors into a matrix, checking the shape.
pub fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Option<Matrix> {
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
