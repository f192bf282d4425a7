//! Closed-loop simulation with exact disturbance preview, running costs and
//! the recursive-feasibility / ISS diagnostics.

use std::fmt::Write as _;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{control_step, controller_prediction, ControllerKind};
use crate::linalg::{quad_form, Vector};
use crate::model::{shift_preview, step_dynamics, CostWeights, ModelError, PreviewWindow};
use crate::ocp::{trajectory_violation, OcpError, OcpSolution, OcpSpec};
use crate::polytope::{HPolytope, PolytopeError};
use crate::synthesis::{IssLevelSet, TerminalIngredients};

/// Constraint tolerance for the shifted-candidate check.
pub const CANDIDATE_TOL: f64 = 1e-7;
const MAX_REJECTIONS: usize = 100_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{controller} OCP is not feasible at k = 0 (status {status})")]
    InitialInfeasible {
        controller: ControllerKind,
        status: &'static str,
    },
    #[error("disturbance sequence has {got} samples, {needed} needed (T + N)")]
    SequenceTooShort { needed: usize, got: usize },
    #[error("disturbance generator: {0}")]
    Generator(String),
    #[error("seed {seed}: controllers saw different disturbance streams")]
    UnpairedDisturbance { seed: u64 },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinusoidChannel {
    pub amplitude: f64,
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Truth generator for `w(t)`, `t ∈ [0, T + N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DisturbanceSpec {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// `wⱼ(t) = aⱼ sin(2πt/Tⱼ + φⱼ)` per channel.
    Sinusoid {
        channels: Vec<SinusoidChannel>,
    },
    /// Uniform on `W` by rejection from its bounding box.
    Uniform {
        seed: u64,
    },
    Sequence {
        values: Vec<Vec<f64>>,
    },
}

impl DisturbanceSpec {
    /// Same generator with the random seed replaced; deterministic kinds are unchanged.
    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            DisturbanceSpec::Uniform { .. } => DisturbanceSpec::Uniform { seed },
            other => other.clone(),
        }
    }
}

/// A generated disturbance stream and how many samples had to be pulled into `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceStream {
    pub values: Vec<Vector>,
    pub clipped: usize,
}

/// Largest `t ∈ [0, 1]` with `t·w ∈ W`, assuming `0 ∈ W`.
fn radial_clip(w: &Vector, w_set: &HPolytope) -> (Vector, bool) {
    if w_set.max_violation(w) <= 0.0 {
        return (w.clone(), false);
    }
    let hw = w_set.h() * w;
    let mut t: f64 = 1.0;
    for (i, &a) in hw.iter().enumerate() {
        if a > 0.0 {
            t = t.min(w_set.g()[i].max(0.0) / a);
        }
    }
    (w * t, true)
}

pub fn generate_disturbance(
    spec: &DisturbanceSpec,
    w_set: &HPolytope,
    len: usize,
) -> Result<DisturbanceStream, HarnessError> {
    let q = w_set.dim();
    let check_dim = |got: usize| -> Result<(), HarnessError> {
        if got != q {
            return Err(ModelError::DimensionMismatch {
                what: "disturbance generator",
                expected: q,
                got,
            }
            .into());
        }
        Ok(())
    };
    let raw: Vec<Vector> = match spec {
        DisturbanceSpec::Zero => vec![Vector::zeros(q); len],
        DisturbanceSpec::Constant { value } => {
            check_dim(value.len())?;
            vec![Vector::from_row_slice(value); len]
        }
        DisturbanceSpec::Sinusoid { channels } => {
            check_dim(channels.len())?;
            if channels
                .iter()
                .any(|c| c.period.is_nan() || c.period <= 0.0)
            {
                return Err(HarnessError::Generator(
                    "sinusoid period must be positive".into(),
                ));
            }
            (0..len)
                .map(|t| {
                    Vector::from_iterator(
                        q,
                        channels.iter().map(|c| {
                            c.amplitude
                                * (2.0 * std::f64::consts::PI * t as f64 / c.period + c.phase).sin()
                        }),
                    )
                })
                .collect()
        }
        DisturbanceSpec::Uniform { seed } => {
            let mut lo = Vector::zeros(q);
            let mut hi = Vector::zeros(q);
            for j in 0..q {
                let mut e = Vector::zeros(q);
                e[j] = 1.0;
                hi[j] = w_set.support_value(&e)?;
                lo[j] = -w_set.support_value(&(-&e))?;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                let mut tries = 0;
                loop {
                    let w = Vector::from_fn(q, |j, _| {
                        if hi[j] > lo[j] {
                            rng.gen_range(lo[j]..=hi[j])
                        } else {
                            lo[j]
                        }
                    });
                    if w_set.max_violation(&w) <= 0.0 {
                        out.push(w);
                        break;
                    }
                    tries += 1;
                    if tries > MAX_REJECTIONS {
                        return Err(HarnessError::Generator(
                            "rejection sampling of W did not terminate".into(),
                        ));
                    }
                }
            }
            out
        }
        DisturbanceSpec::Sequence { values } => {
            if values.len() < len {
                return Err(HarnessError::SequenceTooShort {
                    needed: len,
                    got: values.len(),
                });
            }
            let mut out = Vec::with_capacity(len);
            for v in &values[..len] {
                check_dim(v.len())?;
                out.push(Vector::from_row_slice(v));
            }
            out
        }
    };
    let mut clipped = 0;
    let values = raw
        .into_iter()
        .map(|w| {
            let (w, hit) = radial_clip(&w, w_set);
            clipped += hit as usize;
            w
        })
        .collect();
    Ok(DisturbanceStream { values, clipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub x0: Vec<f64>,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub controller: ControllerKind,
    pub disturbance: DisturbanceSpec,
}

impl Scenario {
    pub fn with_controller(&self, controller: ControllerKind) -> Self {
        Self {
            controller,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            disturbance: self.disturbance.with_seed(seed),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCheck {
    pub feasible: bool,
    /// `−max` constraint violation along the candidate; positive means slack.
    pub margin: f64,
}

/// One closed-loop step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vector,
    pub u: Vector,
    pub w: Vector,
    /// `‖x‖²_Q + ‖u‖²_R`, without the disturbance term.
    pub stage_cost: f64,
    /// `V⁰_N` at this step, S-inclusive; `None` for the terminal law.
    pub value: Option<f64>,
    pub status: &'static str,
    /// Shifted candidate check for the transition `k → k+1`.
    pub candidate: Option<CandidateCheck>,
    pub fallback: bool,
    /// `x*(k+N|k)`.
    pub terminal_state: Option<Vector>,
    /// `Σᵢ ‖w(k+i)‖²` over the window seen at `k`.
    pub window_norm_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TraceSummary {
    pub running_cost: f64,
    pub max_violation: f64,
    pub fallback_count: usize,
    pub candidate_failures: usize,
    pub non_optimal_steps: usize,
    pub clipped_disturbances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub controller: ControllerKind,
    pub steps: Vec<StepRecord>,
    /// `x(T)`.
    pub final_state: Vector,
    /// The full truth stream `w(0), …, w(T+N−1)`.
    pub disturbance: Vec<Vector>,
    pub summary: TraceSummary,
}

impl ClosedLoopTrace {
    /// `x(0), …, x(T)`.
    pub fn states(&self) -> Vec<Vector> {
        let mut xs: Vec<Vector> = self.steps.iter().map(|s| s.x.clone()).collect();
        xs.push(self.final_state.clone());
        xs
    }

    pub fn to_csv(&self) -> String {
        let (n, m, q) = match self.steps.first() {
            Some(s) => (s.x.len(), s.u.len(), s.w.len()),
            None => (self.final_state.len(), 0, 0),
        };
        let mut out = String::from("k");
        for (p, d) in [("x", n), ("u", m), ("w", q)] {
            for j in 1..=d {
                let _ = write!(out, ",{p}_{j}");
            }
        }
        out.push_str(",stage_cost,value,status,candidate_feasible\n");
        for s in &self.steps {
            let _ = write!(out, "{}", s.k);
            for v in s.x.iter().chain(s.u.iter()).chain(s.w.iter()) {
                let _ = write!(out, ",{v:e}");
            }
            let value = s.value.map_or(String::new(), |v| format!("{v:e}"));
            let cand = s
                .candidate
                .as_ref()
                .map_or(String::new(), |c| c.feasible.to_string());
            let _ = writeln!(out, ",{:e},{value},{},{cand}", s.stage_cost, s.status);
        }
        out
    }
}

/// Verify the shifted candidate `{u*(k+1|k), …, u*(k+N−1|k), K x*(k+N|k)}`
/// from the realised `x(k+1)` under the controller's prediction at `k+1`.
pub fn check_candidate_feasibility(
    spec: &OcpSpec,
    kind: ControllerKind,
    previous: &OcpSolution,
    x_next: &Vector,
    window_next: &PreviewWindow,
) -> Result<CandidateCheck, HarnessError> {
    let candidate = previous.shifted_candidate(&spec.terminal.k);
    let violation = match controller_prediction(kind, spec, window_next) {
        Some(pred) => {
            let xs = pred.rollout(x_next, &candidate);
            trajectory_violation(spec, &xs, &candidate, Some(&pred.input_offset))
        }
        None => {
            let mut xs = vec![x_next.clone()];
            let zero = PreviewWindow::zeros(spec.horizon, spec.model.q());
            let window = if kind == ControllerKind::NominalMpc {
                &zero
            } else {
                window_next
            };
            for i in 0..candidate.len() {
                xs.push(step_dynamics(
                    &spec.model,
                    &xs[i],
                    &candidate[i],
                    window.get(i),
                )?);
            }
            trajectory_violation(spec, &xs, &candidate, None)
        }
    };
    Ok(CandidateCheck {
        feasible: violation <= CANDIDATE_TOL,
        margin: -violation,
    })
}

/// Run the receding-horizon loop for `scenario.steps` steps.
///
/// The scenario's horizon overrides the one in `spec`.
pub fn simulate(scenario: &Scenario, spec: &OcpSpec) -> Result<ClosedLoopTrace, HarnessError> {
    let spec = if scenario.horizon == spec.horizon {
        spec.clone()
    } else {
        spec.with_horizon(scenario.horizon)?
    };
    let n = spec.model.n();
    if scenario.x0.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "initial state",
            expected: n,
            got: scenario.x0.len(),
        }
        .into());
    }
    let horizon = spec.horizon;
    let total = scenario.steps + horizon;
    let stream = generate_disturbance(&scenario.disturbance, &spec.w_set, total)?;
    let kind = scenario.controller;

    let mut x = Vector::from_row_slice(&scenario.x0);
    let mut window = PreviewWindow::new(stream.values[..horizon].to_vec(), &spec.w_set)?;
    let mut warm: Option<OcpSolution> = None;
    let mut steps: Vec<StepRecord> = Vec::with_capacity(scenario.steps);
    let mut summary = TraceSummary {
        clipped_disturbances: stream.clipped,
        max_violation: f64::NEG_INFINITY,
        ..TraceSummary::default()
    };

    for k in 0..scenario.steps {
        let step = control_step(kind, &spec, &x, &window, warm.as_ref())?;
        if k == 0 && step.fallback {
            return Err(HarnessError::InitialInfeasible {
                controller: kind,
                status: step
                    .solution
                    .as_ref()
                    .map_or("Unknown", |s| s.status.as_str()),
            });
        }
        let w = stream.values[k].clone();
        let x_next = step_dynamics(&spec.model, &x, &step.u, &w)?;
        let window_next = shift_preview(&window, &stream.values[k + horizon], &spec.w_set)?;

        let (value, status, terminal_state) = match &step.solution {
            Some(sol) => (
                Some(sol.value),
                if step.fallback {
                    "Fallback"
                } else {
                    sol.status.as_str()
                },
                Some(sol.terminal_state().clone()),
            ),
            None => (None, "TerminalLaw", None),
        };
        let candidate = match &step.solution {
            Some(sol) if !step.fallback => Some(check_candidate_feasibility(
                &spec,
                kind,
                sol,
                &x_next,
                &window_next,
            )?),
            _ => None,
        };
        let stage_cost = quad_form(&spec.weights.q, &x) + quad_form(&spec.weights.r, &step.u);
        let violation = spec
            .x_set
            .max_violation(&x)
            .max(spec.u_set.max_violation(&step.u));
        summary.running_cost += stage_cost;
        summary.max_violation = summary.max_violation.max(violation);
        summary.fallback_count += step.fallback as usize;
        summary.candidate_failures += candidate.as_ref().is_some_and(|c| !c.feasible) as usize;
        summary.non_optimal_steps +=
            step.solution.as_ref().is_some_and(|s| !s.is_optimal()) as usize;
        debug!(
            "{kind} k={k} x={:?} u={:?} status={status}",
            x.as_slice(),
            step.u.as_slice()
        );

        steps.push(StepRecord {
            k,
            x: x.clone(),
            u: step.u.clone(),
            w,
            stage_cost,
            value,
            status,
            candidate,
            fallback: step.fallback,
            terminal_state,
            window_norm_sq: window.norm_squared(),
        });
        warm = if step.fallback { None } else { step.solution };
        x = x_next;
        window = window_next;
    }
    summary.max_violation = summary.max_violation.max(spec.x_set.max_violation(&x));
    if summary.fallback_count > 0 {
        info!("{kind}: {} fallback steps", summary.fallback_count);
    }
    Ok(ClosedLoopTrace {
        controller: kind,
        steps,
        final_state: x,
        disturbance: stream.values,
        summary,
    })
}

/// `Σ_{k<T} ‖x(k)‖²_Q + ‖u(k)‖²_R`.
pub fn running_cost(trace: &ClosedLoopTrace) -> f64 {
    trace.steps.iter().map(|s| s.stage_cost).sum()
}

/// Largest `‖x(k+1) − f(x(k), u(k), w(k))‖∞` when replaying the trace.
pub fn replay_error(trace: &ClosedLoopTrace, spec: &OcpSpec) -> Result<f64, ModelError> {
    let xs = trace.states();
    let mut worst: f64 = 0.0;
    for (i, s) in trace.steps.iter().enumerate() {
        let next = step_dynamics(&spec.model, &s.x, &s.u, &s.w)?;
        worst = worst.max((next - &xs[i + 1]).amax());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IssRecord {
    pub k: usize,
    /// `V⁰_N(k+1) − V⁰_N(k)`.
    pub delta_v: f64,
    /// `‖x*(k+N|k)‖²_Δ`.
    pub terminal_delta_norm: f64,
    pub window_norm_sq: f64,
    pub next_window_norm_sq: f64,
    /// `ΔV ≥ 0` with `x*(k+N|k)` outside the level set.
    pub flagged: bool,
}

/// Decrease monitor over consecutive optimal steps.
pub fn iss_decrease_log(
    trace: &ClosedLoopTrace,
    ing: &TerminalIngredients,
    level: &IssLevelSet,
) -> Vec<IssRecord> {
    trace
        .steps
        .windows(2)
        .filter_map(|pair| {
            let (a, b) = (&pair[0], &pair[1]);
            if a.fallback || b.fallback {
                return None;
            }
            let (va, vb) = (a.value?, b.value?);
            let xn = a.terminal_state.as_ref()?;
            let delta_v = vb - va;
            Some(IssRecord {
                k: a.k,
                delta_v,
                terminal_delta_norm: quad_form(&ing.delta, xn),
                window_norm_sq: a.window_norm_sq,
                next_window_norm_sq: b.window_norm_sq,
                flagged: delta_v >= 0.0 && !level.contains(xn),
            })
        })
        .collect()
}

/// Per-seed running costs in [`ControllerKind::COMPARED`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub seed: u64,
    pub costs: [f64; 3],
    pub fallbacks: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub means: [f64; 3],
    /// Per seed, the traces in [`ControllerKind::COMPARED`] order.
    pub traces: Vec<(u64, Vec<ClosedLoopTrace>)>,
}

impl Comparison {
    pub fn mean_of(&self, kind: ControllerKind) -> Option<f64> {
        ControllerKind::COMPARED
            .iter()
            .position(|&c| c == kind)
            .map(|i| self.means[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,nominal,drmpc,preview\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6}",
                r.seed, r.costs[0], r.costs[1], r.costs[2]
            );
        }
        let _ = writeln!(
            out,
            "mean,{:.6},{:.6},{:.6}",
            self.means[0], self.means[1], self.means[2]
        );
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>10} {:>12} {:>12} {:>12}\n",
            "seed", "nominal", "drmpc", "preview"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>10} {:>12.3} {:>12.3} {:>12.3}",
                r.seed, r.costs[0], r.costs[1], r.costs[2]
            );
        }
        let _ = writeln!(
            out,
            "{:>10} {:>12.3} {:>12.3} {:>12.3}",
            "mean", self.means[0], self.means[1], self.means[2]
        );
        out
    }
}

fn compare_one(
    base: &Scenario,
    spec: &OcpSpec,
    seed: u64,
) -> Result<(ComparisonRow, Vec<ClosedLoopTrace>), HarnessError> {
    let scenario = base.with_seed(seed);
    let traces = ControllerKind::COMPARED
        .iter()
        .map(|&kind| simulate(&scenario.with_controller(kind), spec))
        .collect::<Result<Vec<_>, _>>()?;
    if traces
        .iter()
        .any(|t| t.disturbance != traces[0].disturbance)
    {
        return Err(HarnessError::UnpairedDisturbance { seed });
    }
    let mut costs = [0.0; 3];
    let mut fallbacks = [0; 3];
    for (i, t) in traces.iter().enumerate() {
        costs[i] = running_cost(t);
        fallbacks[i] = t.summary.fallback_count;
    }
    Ok((
        ComparisonRow {
            seed,
            costs,
            fallbacks,
        },
        traces,
    ))
}

/// Paired comparison of nominal MPC, DRMPC and preview MPC over `seeds`.
///
/// Seeds run on a pool of `jobs` workers (all cores when `None`); results
/// are sorted by seed before the means are taken.
pub fn compare_controllers(
    base: &Scenario,
    spec: &OcpSpec,
    seeds: &[u64],
    jobs: Option<usize>,
) -> Result<Comparison, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let mut results = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| compare_one(base, spec, seed))
            .collect::<Result<Vec<_>, _>>()
    })?;
    results.sort_by_key(|(row, _)| row.seed);
    let mut means = [0.0; 3];
    for (row, _) in &results {
        for i in 0..3 {
            means[i] += row.costs[i];
        }
    }
    let count = results.len().max(1) as f64;
    for m in &mut means {
        *m /= count;
    }
    let (rows, traces) = results
        .into_iter()
        .map(|(row, t)| {
            let seed = row.seed;
            (row, (seed, t))
        })
        .unzip();
    Ok(Comparison {
        rows,
        means,
        traces,
    })
}

/// Cost weights view used by callers that only need the disturbance-free stage cost.
pub fn stage_cost(weights: &CostWeights, x: &Vector, u: &Vector) -> f64 {
    quad_form(&weights.q, x) + quad_form(&weights.r, u)
}
