//! JSON and CSV artifacts: system definitions, terminal ingredients, OCP
//! points and solutions, closed-loop summaries and 2-D set boundaries.
//!
//! Matrices are written as nested row arrays. On input a flat row-major
//! array is also accepted when the system declares `n`, `m` and `q`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{ClosedLoopTrace, Scenario, TraceSummary};
use crate::linalg::{matrix_from_rows, matrix_to_rows, Matrix, Vector};
use crate::model::{CostWeights, DynamicsModel, LinearDynamics, ModelError, PreviewWindow};
use crate::ocp::OcpSolution;
use crate::polytope::{HPolytope, PolytopeError};
use crate::synthesis::{Certificate, SynthesisOptions, TerminalIngredients};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Schema(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

fn schema(msg: impl Into<String>) -> IoError {
    IoError::Schema(msg.into())
}

pub fn read_file(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixJson {
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixJson {
    pub fn from_matrix(m: &Matrix) -> Self {
        MatrixJson::Nested(matrix_to_rows(m))
    }

    /// `shape` is required for flat input and checked for nested input.
    pub fn to_matrix(&self, name: &str, shape: Option<(usize, usize)>) -> Result<Matrix, IoError> {
        match self {
            MatrixJson::Nested(rows) => {
                let ncols = rows.first().map_or(shape.map_or(0, |s| s.1), |r| r.len());
                let m = matrix_from_rows(rows, ncols)
                    .ok_or_else(|| schema(format!("{name}: ragged rows")))?;
                if let Some((r, c)) = shape {
                    if m.nrows() != r || m.ncols() != c {
                        return Err(schema(format!(
                            "{name}: expected {r}x{c}, got {}x{}",
                            m.nrows(),
                            m.ncols()
                        )));
                    }
                }
                Ok(m)
            }
            MatrixJson::Flat(data) => {
                let (r, c) = shape.ok_or_else(|| {
                    schema(format!("{name}: flat arrays need n, m and q in the system"))
                })?;
                if data.len() != r * c {
                    return Err(schema(format!(
                        "{name}: expected {} entries, got {}",
                        r * c,
                        data.len()
                    )));
                }
                Ok(Matrix::from_row_slice(r, c, data))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxJson {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SetJson {
    Box {
        #[serde(rename = "box")]
        bounds: BoxJson,
    },
    Halfspaces {
        #[serde(rename = "H")]
        h: MatrixJson,
        g: Vec<f64>,
    },
}

impl SetJson {
    pub fn from_polytope(p: &HPolytope) -> Self {
        SetJson::Halfspaces {
            h: MatrixJson::from_matrix(p.h()),
            g: p.g().iter().copied().collect(),
        }
    }

    pub fn to_polytope(&self, name: &str, dim: usize) -> Result<HPolytope, IoError> {
        match self {
            SetJson::Box { bounds } => {
                if bounds.lo.len() != dim || bounds.hi.len() != dim {
                    return Err(schema(format!("{name}: box bounds must have length {dim}")));
                }
                Ok(HPolytope::from_box(
                    &Vector::from_row_slice(&bounds.lo),
                    &Vector::from_row_slice(&bounds.hi),
                )?)
            }
            SetJson::Halfspaces { h, g } => {
                let h = h.to_matrix(name, Some((g.len(), dim)))?;
                Ok(HPolytope::new(h, Vector::from_row_slice(g))?)
            }
        }
    }
}

/// Built-in nonlinear plants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case")]
pub enum BuiltinModel {
    /// Damped pendulum about its stable equilibrium, forward-Euler:
    /// `θ⁺ = θ + dt·ω + w₁`, `ω⁺ = ω + dt(−a sin θ − c ω + u) + w₂`.
    Pendulum {
        dt: f64,
        #[serde(default = "one")]
        a: f64,
        #[serde(default)]
        c: f64,
    },
    /// As above about the upright equilibrium (`+a sin θ`).
    InvertedPendulum {
        dt: f64,
        #[serde(default = "one")]
        a: f64,
        #[serde(default)]
        c: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl BuiltinModel {
    pub fn build(&self) -> DynamicsModel {
        let (dt, a, c) = match *self {
            BuiltinModel::Pendulum { dt, a, c } => (dt, -a, c),
            BuiltinModel::InvertedPendulum { dt, a, c } => (dt, a, c),
        };
        DynamicsModel::nonlinear(2, 1, 2, move |x, u, w| {
            Ok(Vector::from_row_slice(&[
                x[0] + dt * x[1] + w[0],
                x[1] + dt * (a * x[0].sin() - c * x[1] + u[0]) + w[1],
            ]))
        })
        .with_jacobians(move |x, _u, _w| {
            Ok((
                Matrix::from_row_slice(2, 2, &[1.0, dt, dt * a * x[0].cos(), 1.0 - dt * c]),
                Matrix::from_row_slice(2, 1, &[0.0, dt]),
                Matrix::identity(2, 2),
            ))
        })
    }
}

/// On-disk system definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<MatrixJson>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixJson>,
    #[serde(rename = "Bw", default, skip_serializing_if = "Option::is_none")]
    pub bw: Option<MatrixJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinear: Option<BuiltinModel>,
    #[serde(rename = "X")]
    pub x: SetJson,
    #[serde(rename = "U")]
    pub u: SetJson,
    #[serde(rename = "W")]
    pub w: SetJson,
    #[serde(rename = "Q")]
    pub q_weight: MatrixJson,
    #[serde(rename = "R")]
    pub r_weight: MatrixJson,
    #[serde(rename = "S")]
    pub s_weight: MatrixJson,
    #[serde(rename = "Delta", default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<MatrixJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

/// Validated system: plant, constraint sets, weights and synthesis options.
#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub model: DynamicsModel,
    pub x_set: HPolytope,
    pub u_set: HPolytope,
    pub w_set: HPolytope,
    pub weights: CostWeights,
    pub options: SynthesisOptions,
    pub horizon: Option<usize>,
}

fn nested_shape(m: &MatrixJson) -> Option<(usize, usize)> {
    match m {
        MatrixJson::Nested(rows) => Some((rows.len(), rows.first().map_or(0, |r| r.len()))),
        MatrixJson::Flat(_) => None,
    }
}

pub fn parse_system(json: &str) -> Result<SystemConfig, IoError> {
    let raw: SystemJson = serde_json::from_str(json)?;
    let model = match (&raw.nonlinear, &raw.a) {
        (Some(_), Some(_)) => return Err(schema("give either A/B/Bw or nonlinear, not both")),
        (Some(b), None) => b.build(),
        (None, Some(a)) => {
            let b = raw.b.as_ref().ok_or_else(|| schema("missing B"))?;
            let n = raw.n.or_else(|| nested_shape(a).map(|s| s.0));
            let m = raw.m.or_else(|| nested_shape(b).map(|s| s.1));
            let n = n.ok_or_else(|| schema("cannot infer n"))?;
            let m = m.ok_or_else(|| schema("cannot infer m"))?;
            let a = a.to_matrix("A", Some((n, n)))?;
            let b = b.to_matrix("B", Some((n, m)))?;
            let bw = match &raw.bw {
                Some(bw) => {
                    let q = raw.q.or_else(|| nested_shape(bw).map(|s| s.1));
                    let q = q.ok_or_else(|| schema("cannot infer q"))?;
                    bw.to_matrix("Bw", Some((n, q)))?
                }
                None => Matrix::identity(n, n),
            };
            DynamicsModel::linear(LinearDynamics::new(a, b, bw)?)
        }
        (None, None) => return Err(schema("missing A (or a nonlinear builtin)")),
    };
    let (n, m, q) = (model.n(), model.m(), model.q());
    let weights = CostWeights::new(
        raw.q_weight.to_matrix("Q", Some((n, n)))?,
        raw.r_weight.to_matrix("R", Some((m, m)))?,
        raw.s_weight.to_matrix("S", Some((q, q)))?,
    )?;
    if let Some(l) = raw.lambda {
        if l.is_nan() || l < 1.0 {
            return Err(schema(format!("lambda must be >= 1, got {l}")));
        }
    }
    let delta = raw
        .delta
        .as_ref()
        .map(|d| d.to_matrix("Delta", Some((n, n))))
        .transpose()?;
    if raw.horizon == Some(0) {
        return Err(schema("N must be at least 1"));
    }
    Ok(SystemConfig {
        x_set: raw.x.to_polytope("X", n)?,
        u_set: raw.u.to_polytope("U", m)?,
        w_set: raw.w.to_polytope("W", q)?,
        model,
        weights,
        options: SynthesisOptions {
            delta,
            lambda: raw.lambda,
        },
        horizon: raw.horizon,
    })
}

pub fn read_system(path: &Path) -> Result<SystemConfig, IoError> {
    parse_system(&read_file(path)?)
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Certificate margins; non-finite margins (empty or unbounded sets) are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateJson {
    pub certified: bool,
    pub spectral_radius: Option<f64>,
    pub decrease_eigmin: Option<f64>,
    pub rpi_margin: Option<f64>,
    pub state_margin: Option<f64>,
    pub input_margin: Option<f64>,
    pub p_positive_definite: bool,
    pub xf_nonempty: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_iterations: Option<usize>,
}

impl CertificateJson {
    pub fn new(cert: &Certificate, set_iterations: Option<usize>) -> Self {
        Self {
            certified: cert.certified(),
            spectral_radius: finite(cert.spectral_radius),
            decrease_eigmin: finite(cert.decrease_eigmin),
            rpi_margin: finite(cert.rpi_margin),
            state_margin: finite(cert.state_margin),
            input_margin: finite(cert.input_margin),
            p_positive_definite: cert.p_positive_definite,
            xf_nonempty: cert.xf_nonempty,
            set_iterations,
        }
    }

    /// Human-readable margin report.
    pub fn report(&self) -> String {
        let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
        format!(
            "certified            {}\n\
             spectral radius      {}\n\
             decrease eigmin      {}\n\
             RPI margin           {}\n\
             state margin         {}\n\
             input margin         {}\n\
             P positive definite  {}\n\
             Xf nonempty          {}\n",
            self.certified,
            f(self.spectral_radius),
            f(self.decrease_eigmin),
            f(self.rpi_margin),
            f(self.state_margin),
            f(self.input_margin),
            self.p_positive_definite,
            self.xf_nonempty
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngredientsJson {
    #[serde(rename = "K")]
    pub k: MatrixJson,
    #[serde(rename = "P")]
    pub p: MatrixJson,
    #[serde(rename = "Delta")]
    pub delta: MatrixJson,
    pub lambda: f64,
    #[serde(rename = "Xf")]
    pub xf: SetJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateJson>,
}

pub fn ingredients_to_json(
    ing: &TerminalIngredients,
    cert: Option<&CertificateJson>,
) -> Result<String, IoError> {
    let doc = IngredientsJson {
        k: MatrixJson::from_matrix(&ing.k),
        p: MatrixJson::from_matrix(&ing.p),
        delta: MatrixJson::from_matrix(&ing.delta),
        lambda: ing.lambda,
        xf: SetJson::from_polytope(&ing.xf),
        certificate: cert.cloned(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn parse_ingredients(
    json: &str,
    n: usize,
    m: usize,
) -> Result<(TerminalIngredients, Option<CertificateJson>), IoError> {
    let raw: IngredientsJson = serde_json::from_str(json)?;
    let ing = TerminalIngredients {
        k: raw.k.to_matrix("K", Some((m, n)))?,
        p: raw.p.to_matrix("P", Some((n, n)))?,
        delta: raw.delta.to_matrix("Delta", Some((n, n)))?,
        lambda: raw.lambda,
        xf: raw.xf.to_polytope("Xf", n)?,
    };
    Ok((ing, raw.certificate))
}

/// Initial state and optional preview window for a single solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointJson {
    pub x0: Vec<f64>,
    #[serde(default)]
    pub window: Option<Vec<Vec<f64>>>,
}

/// `(x0, window)`; a missing window is all zeros. Membership in `W` is
/// checked by the solver, not here.
pub fn parse_point(
    json: &str,
    n: usize,
    q: usize,
    horizon: usize,
) -> Result<(Vector, PreviewWindow), IoError> {
    let raw: PointJson = serde_json::from_str(json)?;
    if raw.x0.len() != n {
        return Err(schema(format!("x0 must have length {n}")));
    }
    let window = match raw.window {
        None => PreviewWindow::zeros(horizon, q),
        Some(rows) => {
            PreviewWindow::unchecked(rows.iter().map(|r| Vector::from_row_slice(r)).collect(), q)?
        }
    };
    Ok((Vector::from_row_slice(&raw.x0), window))
}

pub fn parse_scenario(json: &str) -> Result<Scenario, IoError> {
    let sc: Scenario = serde_json::from_str(json)?;
    if sc.horizon == 0 {
        return Err(schema("N must be at least 1"));
    }
    Ok(sc)
}

fn rows(v: &[Vector]) -> Vec<Vec<f64>> {
    v.iter().map(|x| x.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionJson {
    pub u_seq: Vec<Vec<f64>>,
    pub x_seq: Vec<Vec<f64>>,
    pub value: f64,
    pub status: String,
    pub kkt_residual: f64,
    pub passes: usize,
}

pub fn solution_to_json(sol: &OcpSolution) -> Result<String, IoError> {
    let doc = SolutionJson {
        u_seq: rows(&sol.u_seq),
        x_seq: rows(&sol.x_seq),
        value: sol.value,
        status: sol.status.as_str().to_string(),
        kkt_residual: sol.kkt_residual,
        passes: sol.passes,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceSummaryJson {
    pub controller: String,
    pub steps: usize,
    pub final_state: Vec<f64>,
    #[serde(flatten)]
    pub summary: TraceSummary,
}

pub fn summary_to_json(trace: &ClosedLoopTrace) -> Result<String, IoError> {
    let doc = TraceSummaryJson {
        controller: trace.controller.to_string(),
        steps: trace.steps.len(),
        final_state: trace.final_state.iter().copied().collect(),
        summary: trace.summary,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Boundary points of a 2-D set (1° sweep), one `x_1,x_2` row each.
pub fn boundary_csv(set: &HPolytope) -> Result<String, IoError> {
    let mut out = String::from("x_1,x_2\n");
    for [a, b] in set.boundary_vertices_2d()? {
        out.push_str(&format!("{a:e},{b:e}\n"));
    }
    Ok(out)
}
