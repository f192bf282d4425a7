//! Offline computation and certification of the terminal ingredients.
//!
//! * gain `K`: infinite-horizon discrete LQR gain for `(A, B, Q, R)`;
//! * weight `P`: solution of `P = A_KᵀPA_K + Q + KᵀRK + λΔ` with `λ ≥ 1`, so
//!   that `P − A_KᵀPA_K − (Q + KᵀRK) − Δ = (λ − 1)Δ ⪰ 0`;
//! * set `X_f`: maximal robust positively invariant set of
//!   `x⁺ = A_K x + B_w w` inside `X ∩ {x : Kx ∈ U}`.

use nalgebra::Complex;
use thiserror::Error;

use crate::linalg::{
    complex_rank, quad_form, spectral_norm, spectral_radius, sym_eig_max, sym_eig_min, symmetrize,
    Matrix, Vector,
};
use crate::model::{validate_pc_set, CostWeights, LinearDynamics};
use crate::polytope::{
    affine_preimage, contains, intersect, pontryagin_difference, HPolytope, PolytopeError,
};

/// Margin by which the closed loop must be inside the unit circle.
pub const STABILITY_MARGIN: f64 = 1e-9;
/// Certification threshold on every margin.
pub const CERTIFICATE_TOL: f64 = 1e-8;
pub const MAX_SET_ITERATIONS: usize = 500;

const RICCATI_TOL: f64 = 1e-12;
const RICCATI_MAX_ITER: usize = 10_000;
const KRONECKER_MAX_N: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("(A, B) is not stabilizable: mode {mode} (|λ| = {modulus:.6}) is uncontrollable")]
    NotStabilizable { mode: String, modulus: f64 },
    #[error("Riccati iteration did not converge after {0} iterations")]
    RiccatiDiverged(usize),
    #[error("closed loop A + BK is not strictly stable (spectral radius {0:.6})")]
    UnstableClosedLoop(f64),
    #[error("lambda must satisfy λ ≥ 1, got {0}")]
    InvalidLambda(f64),
    #[error("Delta must be symmetric positive definite")]
    InvalidDelta,
    #[error("terminal weight is not positive definite")]
    NotPositiveDefinite,
    #[error("Lyapunov solve failed: {0}")]
    LyapunovFailed(String),
    #[error("invariant set iteration did not converge within {0} steps")]
    SetIterationLimit(usize),
    #[error("no robust terminal set exists for this disturbance set")]
    NoRobustTerminalSet,
    #[error("{name} is not a PC-set (nonempty: {nonempty}, bounded: {bounded}, origin interior: {interior})")]
    NotPcSet {
        name: &'static str,
        nonempty: bool,
        bounded: bool,
        interior: bool,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

/// Terminal cost `‖x‖²_P`, controller `u = Kx`, decrease weight `Δ`, scale `λ`, set `X_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalIngredients {
    pub k: Matrix,
    pub p: Matrix,
    pub delta: Matrix,
    pub lambda: f64,
    pub xf: HPolytope,
}

impl TerminalIngredients {
    pub fn terminal_cost(&self, x: &Vector) -> f64 {
        quad_form(&self.p, x)
    }
}

/// User-facing synthesis knobs; defaults are `Δ = I`, `λ = 2`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthesisOptions {
    pub delta: Option<Matrix>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: Matrix,
    pub k: Matrix,
    pub iterations: usize,
}

/// PBH test on every eigenvalue with `|λ| ≥ 1`.
pub fn check_stabilizable(a: &Matrix, b: &Matrix) -> Result<(), SynthesisError> {
    let n = a.nrows();
    let m = b.ncols();
    for lam in a.complex_eigenvalues().iter() {
        if lam.norm() < 1.0 - STABILITY_MARGIN {
            continue;
        }
        let mut pbh = nalgebra::DMatrix::<Complex<f64>>::zeros(n, n + m);
        for i in 0..n {
            for j in 0..n {
                pbh[(i, j)] = Complex::new(a[(i, j)], 0.0)
                    - if i == j { *lam } else { Complex::new(0.0, 0.0) };
            }
            for j in 0..m {
                pbh[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
            }
        }
        if complex_rank(&pbh, 1e-9) < n {
            return Err(SynthesisError::NotStabilizable {
                mode: format!("{:.6}{:+.6}i", lam.re, lam.im),
                modulus: lam.norm(),
            });
        }
    }
    Ok(())
}

/// Discrete algebraic Riccati equation by fixed-point iteration from `P₀ = Q`.
pub fn solve_riccati(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
) -> Result<RiccatiSolution, SynthesisError> {
    check_stabilizable(a, b)?;
    let at = a.transpose();
    let bt = b.transpose();
    let gain = |p: &Matrix| -> Result<Matrix, SynthesisError> {
        let s = r + &bt * p * b;
        let rhs = &bt * p * a;
        s.cholesky()
            .map(|c| -c.solve(&rhs))
            .ok_or(SynthesisError::RiccatiDiverged(0))
    };
    let mut p = q.clone();
    for it in 1..=RICCATI_MAX_ITER {
        let k = gain(&p)?;
        // P⁺ = Q + AᵀPA + AᵀPB K with K = −(R + BᵀPB)⁻¹BᵀPA
        let next = symmetrize(&(q + &at * &p * a + &at * &p * b * &k));
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SynthesisError::RiccatiDiverged(it));
        }
        let step = (&next - &p).norm();
        p = next;
        if step <= RICCATI_TOL * p.norm().max(1.0) {
            let k = gain(&p)?;
            let rho = spectral_radius(&(a + b * &k));
            if rho >= 1.0 - STABILITY_MARGIN {
                return Err(SynthesisError::UnstableClosedLoop(rho));
            }
            return Ok(RiccatiSolution {
                p,
                k,
                iterations: it,
            });
        }
    }
    Err(SynthesisError::RiccatiDiverged(RICCATI_MAX_ITER))
}

/// Stabilizing state feedback `u = Kx` (discrete LQR gain).
pub fn synthesize_gain(
    lin: &LinearDynamics,
    weights: &CostWeights,
) -> Result<Matrix, SynthesisError> {
    Ok(solve_riccati(&lin.a, &lin.b, &weights.q, &weights.r)?.k)
}

/// Solve `P = AᵀPA + M` by vectorisation `(I − Aᵀ⊗Aᵀ) vec P = vec M`.
pub fn solve_lyapunov_kronecker(a: &Matrix, m: &Matrix) -> Result<Matrix, SynthesisError> {
    let n = a.nrows();
    let at = a.transpose();
    let lhs = Matrix::identity(n * n, n * n) - at.kronecker(&at);
    let rhs = Vector::from_column_slice(m.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| SynthesisError::LyapunovFailed("singular Kronecker system".into()))?;
    Ok(symmetrize(&Matrix::from_column_slice(n, n, sol.as_slice())))
}

/// Solve `P = AᵀPA + M` by accumulating `Σ (Aᵀ)ⁱ M Aⁱ`.
pub fn solve_lyapunov_iterative(a: &Matrix, m: &Matrix) -> Result<Matrix, SynthesisError> {
    let at = a.transpose();
    let mut p = m.clone();
    let mut term = m.clone();
    for _ in 0..1_000_000 {
        term = &at * &term * a;
        p += &term;
        if term.norm() <= 1e-17 * p.norm() {
            return Ok(symmetrize(&p));
        }
        if !term.norm().is_finite() {
            break;
        }
    }
    Err(SynthesisError::LyapunovFailed(
        "series did not converge".into(),
    ))
}

/// Terminal weight from the Lyapunov equation `P = A_KᵀPA_K + (Q + KᵀRK + λΔ)`.
pub fn solve_terminal_weight(
    lin: &LinearDynamics,
    k: &Matrix,
    weights: &CostWeights,
    delta: &Matrix,
    lambda: f64,
) -> Result<Matrix, SynthesisError> {
    if lambda.is_nan() || lambda < 1.0 {
        return Err(SynthesisError::InvalidLambda(lambda));
    }
    if !delta.is_square()
        || delta.nrows() != lin.n()
        || !crate::linalg::is_symmetric(delta, 1e-12)
        || sym_eig_min(delta) <= 0.0
    {
        return Err(SynthesisError::InvalidDelta);
    }
    let ak = lin.closed_loop(k);
    let rho = spectral_radius(&ak);
    if rho >= 1.0 - STABILITY_MARGIN {
        return Err(SynthesisError::UnstableClosedLoop(rho));
    }
    let m = symmetrize(&(&weights.q + k.transpose() * &weights.r * k + delta * lambda));
    let p = if lin.n() <= KRONECKER_MAX_N {
        solve_lyapunov_kronecker(&ak, &m)?
    } else {
        solve_lyapunov_iterative(&ak, &m)?
    };
    if p.clone().cholesky().is_none() {
        return Err(SynthesisError::NotPositiveDefinite);
    }
    Ok(p)
}

/// Maximal RPI set iteration, with the number of refinement steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSet {
    pub set: HPolytope,
    pub iterations: usize,
}

fn require_pc(name: &'static str, set: &HPolytope) -> Result<(), SynthesisError> {
    let r = validate_pc_set(set);
    if !r.passed() {
        return Err(SynthesisError::NotPcSet {
            name,
            nonempty: r.nonempty,
            bounded: r.bounded,
            interior: r.origin_interior,
        });
    }
    Ok(())
}

/// Largest robust positively invariant set of `x⁺ = A_K x + B_w w, w ∈ W`
/// inside `X̄ = X ∩ {x : Kx ∈ U}`:
/// `Ω₀ = X̄`, `Ω_{t+1} = Ω_t ∩ {x : A_K x ∈ Ω_t ⊖ B_w W}` until `Ω_{t+1} = Ω_t`.
pub fn compute_terminal_set(
    lin: &LinearDynamics,
    k: &Matrix,
    x_set: &HPolytope,
    u_set: &HPolytope,
    w_set: &HPolytope,
) -> Result<TerminalSet, SynthesisError> {
    if x_set.dim() != lin.n() || u_set.dim() != lin.m() || w_set.dim() != lin.q() {
        return Err(SynthesisError::Dimension(
            "constraint sets do not match (n, m, q)".into(),
        ));
    }
    require_pc("X", x_set)?;
    require_pc("U", u_set)?;
    // W may be the singleton {0}; it only needs to be nonempty and bounded.
    if w_set.is_empty() || !w_set.is_bounded() {
        return Err(SynthesisError::NotPcSet {
            name: "W",
            nonempty: !w_set.is_empty(),
            bounded: w_set.is_bounded(),
            interior: false,
        });
    }
    let ak = lin.closed_loop(k);
    let rho = spectral_radius(&ak);
    if rho >= 1.0 - STABILITY_MARGIN {
        return Err(SynthesisError::UnstableClosedLoop(rho));
    }
    let mut omega = intersect(x_set, &affine_preimage(u_set, k)?)?;
    for t in 1..=MAX_SET_ITERATIONS {
        let eroded = pontryagin_difference(&omega, w_set, &lin.bw)?;
        if eroded.is_empty() {
            return Err(SynthesisError::NoRobustTerminalSet);
        }
        let next = intersect(&omega, &affine_preimage(&eroded, &ak)?)?;
        if next.is_empty() {
            return Err(SynthesisError::NoRobustTerminalSet);
        }
        let converged = contains(&next, &omega) && contains(&omega, &next);
        log::debug!(
            "terminal set iteration {t}: {} constraints",
            next.n_constraints()
        );
        omega = next;
        if converged {
            return Ok(TerminalSet {
                set: omega,
                iterations: t,
            });
        }
    }
    Err(SynthesisError::SetIterationLimit(MAX_SET_ITERATIONS))
}

/// Numeric margins of the terminal ingredient conditions; all must be
/// `≥ −1e-8` to certify.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub spectral_radius: f64,
    /// `λ_min(P − A_KᵀPA_K − (Q + KᵀRK) − Δ)`.
    pub decrease_eigmin: f64,
    /// `min_i gᵢ − support(A_K·X_f ⊕ B_w·W, Hᵢ)` over rows of `X_f`.
    pub rpi_margin: f64,
    /// `min_i gᵢ − support(X_f, Hᵢ)` over rows of `X`.
    pub state_margin: f64,
    /// `min_i gᵢ − support(K·X_f, Hᵢ)` over rows of `U`.
    pub input_margin: f64,
    pub p_positive_definite: bool,
    pub xf_nonempty: bool,
}

impl Certificate {
    pub fn certified(&self) -> bool {
        self.spectral_radius < 1.0 - STABILITY_MARGIN
            && self.p_positive_definite
            && self.xf_nonempty
            && self.decrease_eigmin >= -CERTIFICATE_TOL
            && self.rpi_margin >= -CERTIFICATE_TOL
            && self.state_margin >= -CERTIFICATE_TOL
            && self.input_margin >= -CERTIFICATE_TOL
    }
}

fn min_margin(outer: &HPolytope, support: impl Fn(&Vector) -> Result<f64, PolytopeError>) -> f64 {
    (0..outer.n_constraints())
        .map(|i| match support(&outer.h().row(i).transpose()) {
            Ok(s) => outer.g()[i] - s,
            Err(_) => f64::NEG_INFINITY,
        })
        .fold(f64::INFINITY, f64::min)
}

/// `P − A_KᵀPA_K − (Q + KᵀRK) − Δ`.
pub fn decrease_residual(
    lin: &LinearDynamics,
    ing: &TerminalIngredients,
    weights: &CostWeights,
) -> Matrix {
    let ak = lin.closed_loop(&ing.k);
    &ing.p
        - ak.transpose() * &ing.p * &ak
        - (&weights.q + ing.k.transpose() * &weights.r * &ing.k)
        - &ing.delta
}

/// Check the terminal decrease and invariance conditions numerically.
pub fn verify_terminal_ingredients(
    ing: &TerminalIngredients,
    lin: &LinearDynamics,
    weights: &CostWeights,
    x_set: &HPolytope,
    u_set: &HPolytope,
    w_set: &HPolytope,
) -> Certificate {
    let ak = lin.closed_loop(&ing.k);
    let xf = &ing.xf;
    let xf_nonempty = !xf.is_empty();
    let rpi_margin = if xf_nonempty {
        min_margin(xf, |h| {
            Ok(xf.image_support(&ak, h)? + w_set.image_support(&lin.bw, h)?)
        })
    } else {
        f64::NEG_INFINITY
    };
    let state_margin = if xf_nonempty {
        min_margin(x_set, |h| xf.support_value(h))
    } else {
        f64::NEG_INFINITY
    };
    let input_margin = if xf_nonempty {
        min_margin(u_set, |h| xf.image_support(&ing.k, h))
    } else {
        f64::NEG_INFINITY
    };
    Certificate {
        spectral_radius: spectral_radius(&ak),
        decrease_eigmin: sym_eig_min(&decrease_residual(lin, ing, weights)),
        rpi_margin,
        state_margin,
        input_margin,
        p_positive_definite: ing.p.clone().cholesky().is_some(),
        xf_nonempty,
    }
}

/// Estimated ultimate bound `{x : ‖x‖²_P ≤ β}` of the terminal closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct IssLevelSet {
    pub beta: f64,
    pub p: Matrix,
    /// Radius of `W` used in `β`.
    pub w_radius: f64,
}

impl IssLevelSet {
    pub fn contains(&self, x: &Vector) -> bool {
        quad_form(&self.p, x) <= self.beta
    }
}

/// Radius of the bounding box of `W`, `sqrt(Σⱼ max(h(W, eⱼ), h(W, −eⱼ))²)`.
pub fn support_radius(w_set: &HPolytope) -> Result<f64, PolytopeError> {
    let q = w_set.dim();
    let mut acc = 0.0;
    for j in 0..q {
        let mut e = Vector::zeros(q);
        e[j] = 1.0;
        let hi = w_set.support_value(&e)?;
        let lo = w_set.support_value(&(-&e))?;
        acc += hi.max(lo).max(0.0).powi(2);
    }
    Ok(acc.sqrt())
}

/// `β = α₂ ∘ α₃⁻¹ ∘ ρ(r)` with `α₂(s) = λ_max(P)s²`,
/// `α₃(s) = (λ_min(Q) + λ_min(Δ))s²` and `ρ(s) = λ_max(P)‖B_w‖²s²`.
pub fn iss_level_set(
    ing: &TerminalIngredients,
    weights: &CostWeights,
    lin: &LinearDynamics,
    w_set: &HPolytope,
) -> Result<IssLevelSet, PolytopeError> {
    let r = support_radius(w_set)?;
    let pmax = sym_eig_max(&ing.p);
    let cw = pmax * spectral_norm(&lin.bw).powi(2);
    let alpha3 = sym_eig_min(&weights.q).max(0.0) + sym_eig_min(&ing.delta);
    let rho = cw * r * r;
    Ok(IssLevelSet {
        beta: pmax * rho / alpha3,
        p: ing.p.clone(),
        w_radius: r,
    })
}

/// Full offline pipeline: gain, terminal weight, terminal set and certificate.
pub fn synthesize(
    lin: &LinearDynamics,
    weights: &CostWeights,
    x_set: &HPolytope,
    u_set: &HPolytope,
    w_set: &HPolytope,
    options: &SynthesisOptions,
) -> Result<(TerminalIngredients, Certificate, usize), SynthesisError> {
    let lambda = options.lambda.unwrap_or(2.0);
    if lambda.is_nan() || lambda < 1.0 {
        return Err(SynthesisError::InvalidLambda(lambda));
    }
    let delta = options
        .delta
        .clone()
        .unwrap_or_else(|| Matrix::identity(lin.n(), lin.n()));
    let k = synthesize_gain(lin, weights)?;
    let p = solve_terminal_weight(lin, &k, weights, &delta, lambda)?;
    let ts = compute_terminal_set(lin, &k, x_set, u_set, w_set)?;
    let ing = TerminalIngredients {
        k,
        p,
        delta,
        lambda,
        xf: ts.set,
    };
    let cert = verify_terminal_ingredients(&ing, lin, weights, x_set, u_set, w_set);
    Ok((ing, cert, ts.iterations))
}
