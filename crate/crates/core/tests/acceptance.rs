//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines always
//! reach the test log; the process exits nonzero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use preview_mpc::harness::{compare_controllers, iss_decrease_log, simulate};
use preview_mpc::linalg::{quad_form, sym_eig_max};
use preview_mpc::ocp::{horizon_cost, solve_ocp};
use preview_mpc::qp::{solve_qp, QpForm, QpStatus};
use preview_mpc::synthesis::{
    compute_terminal_set, iss_level_set, solve_riccati, solve_terminal_weight,
};
use preview_mpc::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

// 1. terminal weight
const LYAPUNOV_REL_TOL: f64 = 1e-10;
const DECREASE_TOL: f64 = 1e-8;
const C1_BUDGET: Duration = Duration::from_secs(1);
// 2. terminal set
const SET_ITER_CAP: usize = 500;
const RPI_TOL: f64 = 1e-8;
const INCLUSION_TOL: f64 = 1e-9;
const C2_BUDGET: Duration = Duration::from_secs(5);
// 3. QP solver
const QP_COUNT: usize = 200;
const KKT_TOL: f64 = 1e-7;
const ORACLE_VALUE_TOL: f64 = 1e-5;
const ORACLE_ITERS: usize = 1_000_000;
// 4. / 5. closed loop
const SEEDS: u64 = 100;
const STEPS: usize = 30;
const HORIZON: usize = 5;
const X0: [f64; 2] = [-0.7, 0.4];
const C4_BUDGET: Duration = Duration::from_secs(60);
const CONVERGED_NORM: f64 = 1e-6;
const DV_TOL: f64 = 1e-8;
/// Last-6-step mean of ‖x‖ under uniform w in W; first certified run
/// measured 0.0817 over seeds 0..100, frozen with a small allowance.
const ISS_RADIUS: f64 = 0.09;
// 6. ordering
const MARGIN_FRACTION: f64 = 0.02;
// 7. coincidence
const COINCIDE_TOL: f64 = 1e-7;
// 8. grid oracle
const GRID_POINTS: usize = 41;
const GRID_PAIRS: usize = 20;
const GRID_VALUE_REL: f64 = 1e-3;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn c1_terminal_weight() -> Verdict {
    let t0 = Instant::now();
    let lin = double_integrator();
    let w = weights();
    let k = solve_riccati(&lin.a, &lin.b, &w.q, &w.r).unwrap().k;
    let delta = Matrix::identity(2, 2);
    let lambda = 2.0;
    let p = solve_terminal_weight(&lin, &k, &w, &delta, lambda).unwrap();
    let elapsed = t0.elapsed();

    let ak = lin.closed_loop(&k);
    let stage = &w.q + k.transpose() * &w.r * &k;
    let lyap = &p - ak.transpose() * &p * &ak - (&stage + &delta * lambda);
    let rel = lyap.norm() / p.norm();
    let decrease = &p - ak.transpose() * &p * &ak - &stage - &delta;
    let dev = (decrease - &delta * (lambda - 1.0)).amax();
    verdict(
        rel <= LYAPUNOV_REL_TOL && dev <= DECREASE_TOL && elapsed < C1_BUDGET,
        format!("lyapunov rel {rel:.2e}, decrease residual vs (λ−1)Δ {dev:.2e}, {elapsed:.2?}"),
    )
}

fn c2_terminal_set() -> Verdict {
    let t0 = Instant::now();
    let lin = double_integrator();
    let (x, u, w) = sets();
    let k = solve_riccati(&lin.a, &lin.b, &weights().q, &weights().r)
        .unwrap()
        .k;
    let ts = compute_terminal_set(&lin, &k, &x, &u, &w).unwrap();
    let elapsed = t0.elapsed();
    let xf = &ts.set;
    let ak = lin.closed_loop(&k);

    let row = |p: &HPolytope, i: usize| p.h().row(i).transpose();
    let mut state = f64::INFINITY;
    for i in 0..x.n_constraints() {
        state = state.min(x.g()[i] - xf.support_value(&row(&x, i)).unwrap());
    }
    let mut input = f64::INFINITY;
    for i in 0..u.n_constraints() {
        input = input.min(u.g()[i] - xf.image_support(&k, &row(&u, i)).unwrap());
    }
    let mut rpi = f64::INFINITY;
    for wv in w_vertices() {
        for i in 0..xf.n_constraints() {
            let h = row(xf, i);
            let s = xf.image_support(&ak, &h).unwrap() + h.dot(&(&lin.bw * &wv));
            rpi = rpi.min(xf.g()[i] - s);
        }
    }
    verdict(
        ts.iterations <= SET_ITER_CAP
            && !xf.is_empty()
            && state >= -INCLUSION_TOL
            && input >= -INCLUSION_TOL
            && rpi >= -RPI_TOL
            && elapsed < C2_BUDGET,
        format!(
            "{} iterations, {} faces, margins state {state:.2e} input {input:.2e} rpi {rpi:.2e}, {elapsed:.2?}",
            ts.iterations,
            xf.n_constraints()
        ),
    )
}

enum Oracle {
    /// Projected gradient on `lo ≤ u ≤ hi`.
    Box(Vector, Vector),
    /// Projected gradient on the dual `λ ≥ 0`.
    Dual,
}

fn random_qp(rng: &mut ChaCha8Rng, boxed: bool) -> (QpForm, Oracle) {
    let n = rng.gen_range(1..=10);
    let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let hess = m.transpose() * &m + Matrix::identity(n, n) * rng.gen_range(0.05..1.0);
    let lin = Vector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    if boxed {
        let lo = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..0.0));
        let hi = Vector::from_fn(n, |i, _| lo[i] + rng.gen_range(0.01..1.5));
        let mut a = Matrix::zeros(2 * n, n);
        let mut b = Vector::zeros(2 * n);
        for i in 0..n {
            a[(i, i)] = 1.0;
            b[i] = hi[i];
            a[(n + i, i)] = -1.0;
            b[n + i] = -lo[i];
        }
        let qp = QpForm {
            hess,
            lin,
            const_term: 0.5,
            ineq_a: a,
            ineq_b: b,
        };
        (qp, Oracle::Box(lo, hi))
    } else {
        let rows = rng.gen_range(0..=40);
        let a = Matrix::from_fn(rows, n, |_, _| rng.gen_range(-1.0..1.0));
        let u0 = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        // a third of the rows pass exactly through the known feasible point
        let slack = Vector::from_fn(rows, |_, _| {
            if rng.gen_bool(1.0 / 3.0) {
                0.0
            } else {
                rng.gen_range(0.0..1.0)
            }
        });
        let b = &a * &u0 + slack;
        let qp = QpForm {
            hess,
            lin,
            const_term: -0.25,
            ineq_a: a,
            ineq_b: b,
        };
        (qp, Oracle::Dual)
    }
}

/// Accelerated projected gradient with adaptive restart; returns the
/// oracle's optimal value.
fn oracle_value(qp: &QpForm, oracle: &Oracle) -> f64 {
    let hinv = qp.hess.clone().try_inverse().unwrap();
    match oracle {
        Oracle::Box(lo, hi) => {
            let step = 1.0 / sym_eig_max(&qp.hess);
            let proj = |u: Vector| Vector::from_fn(u.len(), |i, _| u[i].clamp(lo[i], hi[i]));
            let mut u = proj(Vector::zeros(qp.n_vars()));
            let mut y = u.clone();
            let mut t: f64 = 1.0;
            for _ in 0..ORACLE_ITERS {
                let grad = &qp.hess * &y + &qp.lin;
                let next = proj(&y - grad * step);
                if (&next - &u).amax() <= 1e-15 {
                    u = next;
                    break;
                }
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                if (&y - &next).dot(&(&next - &u)) > 0.0 {
                    t = 1.0;
                    y = next.clone();
                } else {
                    y = &next + (&next - &u) * ((t - 1.0) / t_next);
                    t = t_next;
                }
                u = next;
            }
            qp.objective(&u)
        }
        Oracle::Dual => {
            let rows = qp.ineq_b.len();
            if rows == 0 {
                return qp.objective(&(-(&hinv * &qp.lin)));
            }
            let at = qp.ineq_a.transpose();
            let gram = &qp.ineq_a * &hinv * &at;
            let step = 1.0 / sym_eig_max(&gram).max(1e-12);
            let primal = |lam: &Vector| -(&hinv * (&qp.lin + &at * lam));
            let dual_value = |lam: &Vector| {
                let r = &qp.lin + &at * lam;
                -0.5 * quad_form(&hinv, &r) - qp.ineq_b.dot(lam) + qp.const_term
            };
            let mut lam = Vector::zeros(rows);
            let mut y = lam.clone();
            let mut t: f64 = 1.0;
            for it in 0..ORACLE_ITERS {
                let grad = &qp.ineq_a * primal(&y) - &qp.ineq_b;
                let next = (&y + grad * step).map(|v| v.max(0.0));
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                if (&next - &y).dot(&(&next - &lam)) < 0.0 {
                    t = 1.0;
                    y = next.clone();
                } else {
                    y = &next + (&next - &lam) * ((t - 1.0) / t_next);
                    t = t_next;
                }
                let moved = (&next - &lam).amax();
                lam = next;
                if it % 64 == 0 && moved <= 1e-14 {
                    let u = primal(&lam);
                    let gap = qp.objective(&u) - dual_value(&lam);
                    if qp.max_violation(&u) <= 1e-11 && gap.abs() <= 1e-11 {
                        break;
                    }
                }
            }
            dual_value(&lam)
        }
    }
}

fn c3_qp_soundness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let problems: Vec<(QpForm, Oracle)> = (0..QP_COUNT)
        .map(|i| random_qp(&mut rng, i % 2 == 0))
        .collect();
    let mut worst_kkt: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut not_optimal = 0;
    let mut first = Vec::with_capacity(QP_COUNT);
    for (qp, oracle) in &problems {
        let sol = solve_qp(qp).unwrap();
        if sol.status != QpStatus::Optimal {
            not_optimal += 1;
        }
        worst_kkt = worst_kkt.max(sol.kkt_residual);
        let reference = oracle_value(qp, oracle);
        worst_gap = worst_gap.max((sol.value - reference).abs() / reference.abs().max(1.0));
        first.push(sol);
    }
    let mut mismatches = 0;
    for _ in 0..3 {
        for ((qp, _), base) in problems.iter().zip(&first) {
            let again = solve_qp(qp).unwrap();
            if again != *base {
                mismatches += 1;
            }
        }
    }
    verdict(
        not_optimal == 0 && worst_kkt <= KKT_TOL && worst_gap <= ORACLE_VALUE_TOL && mismatches == 0,
        format!(
            "{QP_COUNT} QPs, non-optimal {not_optimal}, max KKT {worst_kkt:.2e}, max oracle gap {worst_gap:.2e}, repeat mismatches {mismatches}"
        ),
    )
}

fn scenario(controller: ControllerKind, disturbance: DisturbanceSpec) -> Scenario {
    Scenario {
        x0: X0.to_vec(),
        steps: STEPS,
        horizon: HORIZON,
        controller,
        disturbance,
    }
}

fn c4_recursive_feasibility(spec: &OcpSpec) -> Verdict {
    let t0 = Instant::now();
    let mut optimal = 0;
    let mut candidates = 0;
    let mut total = 0;
    let mut worst_margin = f64::INFINITY;
    for seed in 0..SEEDS {
        let sc = scenario(
            ControllerKind::PreviewMpc,
            DisturbanceSpec::Uniform { seed },
        );
        let trace = simulate(&sc, spec).unwrap();
        for s in &trace.steps {
            total += 1;
            optimal += (s.status == "Optimal") as usize;
            if let Some(c) = &s.candidate {
                candidates += c.feasible as usize;
                worst_margin = worst_margin.min(c.margin);
            }
        }
    }
    let elapsed = t0.elapsed();
    let expected = SEEDS as usize * STEPS;
    verdict(
        total == expected && optimal == expected && candidates == expected && elapsed < C4_BUDGET,
        format!(
            "{optimal}/{expected} optimal, {candidates}/{expected} candidates feasible (min margin {worst_margin:.2e}), {elapsed:.2?}"
        ),
    )
}

fn c5_iss(spec: &OcpSpec) -> Verdict {
    let zero = simulate(
        &scenario(ControllerKind::PreviewMpc, DisturbanceSpec::Zero),
        spec,
    )
    .unwrap();
    let states = zero.states();
    let converged_at = states.iter().position(|x| x.norm() < CONVERGED_NORM);
    let lin = spec.model.as_linear().unwrap();
    let level = iss_level_set(&spec.terminal, &spec.weights, lin, &spec.w_set).unwrap();
    let log = iss_decrease_log(&zero, &spec.terminal, &level);
    let max_dv = log
        .iter()
        .map(|r| r.delta_v)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut radius: f64 = 0.0;
    for seed in 0..SEEDS {
        let t = simulate(
            &scenario(
                ControllerKind::PreviewMpc,
                DisturbanceSpec::Uniform { seed },
            ),
            spec,
        )
        .unwrap();
        let xs = t.states();
        let tail = &xs[xs.len() - 6..];
        radius = radius.max(tail.iter().map(|x| x.norm()).sum::<f64>() / 6.0);
    }
    verdict(
        converged_at.is_some_and(|k| k <= STEPS)
            && log.len() == STEPS - 1
            && max_dv <= DV_TOL
            && radius <= ISS_RADIUS,
        format!(
            "w≡0: ‖x‖<{CONVERGED_NORM:.0e} at k={}, max ΔV {max_dv:.2e}; random w: max tail mean ‖x‖ {radius:.4} (frozen {ISS_RADIUS})",
            converged_at.map_or("never".into(), |k| k.to_string())
        ),
    )
}

fn c6_ordering(spec: &OcpSpec) -> Verdict {
    let seeds: Vec<u64> = (0..SEEDS).collect();
    let base = scenario(
        ControllerKind::PreviewMpc,
        DisturbanceSpec::Uniform { seed: 0 },
    );
    let cmp = compare_controllers(&base, spec, &seeds, None).unwrap();
    let [nominal, drmpc, preview] = cmp.means;
    let fallbacks: usize = cmp
        .rows
        .iter()
        .map(|r| r.fallbacks.iter().sum::<usize>())
        .sum();
    let in_range = cmp.means.iter().all(|&c| (1.0..=100.0).contains(&c));
    verdict(
        preview <= drmpc
            && drmpc <= nominal
            && nominal - preview >= MARGIN_FRACTION * nominal
            && fallbacks == 0
            && in_range
            && cmp.rows.len() >= 50,
        format!(
            "{} seeds, mean nominal {nominal:.3} / drmpc {drmpc:.3} / preview {preview:.3}, preview gain {:.1}%, fallbacks {fallbacks}",
            cmp.rows.len(),
            100.0 * (nominal - preview) / nominal
        ),
    )
}

fn c7_coincidence(spec: &OcpSpec) -> Verdict {
    let traces: Vec<ClosedLoopTrace> = ControllerKind::COMPARED
        .iter()
        .map(|&c| simulate(&scenario(c, DisturbanceSpec::Zero), spec).unwrap())
        .collect();
    let mut worst: f64 = 0.0;
    for t in &traces[1..] {
        for (a, b) in t.states().iter().zip(traces[0].states()) {
            worst = worst.max((a - b).amax());
        }
        for (a, b) in t.steps.iter().zip(&traces[0].steps) {
            worst = worst.max((&a.u - &b.u).amax());
        }
    }
    verdict(
        worst <= COINCIDE_TOL && traces.iter().all(|t| t.steps.len() == STEPS),
        format!("max pointwise deviation over {STEPS} steps {worst:.2e}"),
    )
}

/// Exhaustive search over the input grid `centre ± half_width` with
/// `GRID_POINTS` points per input; `None` if no grid point is feasible.
fn grid_search(
    spec: &OcpSpec,
    x0: &Vector,
    window: &PreviewWindow,
    centre: &[f64],
    half_width: f64,
) -> Option<(Vec<f64>, f64)> {
    let lin = spec.model.as_linear().unwrap();
    let horizon = spec.horizon;
    let total = GRID_POINTS.pow(horizon as u32);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut u = vec![0.0; horizon];
    for idx in 0..total {
        let mut rem = idx;
        for (i, ui) in u.iter_mut().enumerate() {
            let j = rem % GRID_POINTS;
            rem /= GRID_POINTS;
            *ui = centre[i] - half_width + 2.0 * half_width * j as f64 / (GRID_POINTS - 1) as f64;
        }
        let us: Vec<Vector> = u.iter().map(|&a| v(&[a])).collect();
        if us.iter().any(|ui| spec.u_set.max_violation(ui) > 0.0) {
            continue;
        }
        let mut xs = vec![x0.clone()];
        for i in 0..horizon {
            xs.push(&lin.a * &xs[i] + &lin.b * &us[i] + &lin.bw * window.get(i));
        }
        let feasible = xs[..horizon]
            .iter()
            .all(|x| spec.x_set.max_violation(x) <= 0.0)
            && spec.terminal.xf.max_violation(&xs[horizon]) <= 0.0;
        if !feasible {
            continue;
        }
        let value = horizon_cost(&spec.weights, &spec.terminal.p, &xs, &us, window.values());
        if best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((u.clone(), value));
        }
    }
    best
}

fn c8_grid_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut detail = Vec::new();
    let mut pass = true;
    for horizon in [2, 3] {
        let spec = spec(horizon);
        let cell = 2.0 / (GRID_POINTS - 1) as f64;
        let mut compared = 0;
        let mut worst_cell: f64 = 0.0;
        let mut worst_coarse: f64 = 0.0;
        let mut worst_rel: f64 = 0.0;
        let mut attempts = 0;
        while compared < GRID_PAIRS && attempts < 2000 {
            attempts += 1;
            let x0 = Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let window = PreviewWindow::new(
                (0..horizon)
                    .map(|_| Vector::from_fn(2, |_, _| rng.gen_range(-0.1..0.1)))
                    .collect(),
                &spec.w_set,
            )
            .unwrap();
            let sol = solve_ocp(&spec, &x0, &window, None).unwrap();
            let coarse = grid_search(&spec, &x0, &window, &vec![0.0; horizon], 1.0);
            let Some((u_coarse, _)) = coarse else {
                // no feasible grid point; the solver must not claim more than the grid can see
                continue;
            };
            if !sol.is_optimal() {
                pass = false;
                detail.push(format!("grid feasible but solver {}", sol.status.as_str()));
                continue;
            }
            compared += 1;
            let offset = |u: &[f64]| {
                u.iter()
                    .zip(&sol.u_seq)
                    .map(|(a, b)| (a - b[0]).abs())
                    .fold(0.0, f64::max)
                    / cell
            };
            worst_coarse = worst_coarse.max(offset(&u_coarse));
            // Two nested refinements of the exhaustive grid, each one cell wide.
            // The coarse argmin alone can sit more than a cell away on
            // anisotropic costs, so the input check uses the refined argmin.
            let mut centre = u_coarse;
            let mut width = cell;
            let mut value = f64::INFINITY;
            for _ in 0..2 {
                if let Some((c, val)) = grid_search(&spec, &x0, &window, &centre, width) {
                    centre = c;
                    value = val;
                }
                width /= (GRID_POINTS - 1) as f64 / 2.0;
            }
            worst_cell = worst_cell.max(offset(&centre));
            let rel = (value - sol.value) / sol.value.abs().max(f64::MIN_POSITIVE);
            if value < sol.value - 1e-9 {
                pass = false;
            }
            worst_rel = worst_rel.max(rel.abs());
        }
        pass &= compared == GRID_PAIRS && worst_cell <= 1.0 && worst_rel <= GRID_VALUE_REL;
        detail.push(format!(
            "N={horizon} ({}^{horizon} grid): {compared} pairs, max offset {worst_cell:.3} cells (coarse argmin {worst_coarse:.2}), max value rel {worst_rel:.1e}",
            GRID_POINTS
        ));
    }
    verdict(pass, detail.join("; "))
}

type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;

fn main() {
    let spec = spec(HORIZON);
    let criteria: Vec<(&str, Check<'_>)> = vec![
        ("terminal certificate", Box::new(c1_terminal_weight)),
        ("terminal set validity", Box::new(c2_terminal_set)),
        ("QP solver soundness", Box::new(c3_qp_soundness)),
        (
            "recursive feasibility",
            Box::new(|| c4_recursive_feasibility(&spec)),
        ),
        ("ISS behaviour", Box::new(|| c5_iss(&spec))),
        ("running-cost ordering", Box::new(|| c6_ordering(&spec))),
        ("policy coincidence", Box::new(|| c7_coincidence(&spec))),
        ("grid-search OCP oracle", Box::new(c8_grid_oracle)),
    ];
    let mut failed = 0;
    println!("\nacceptance");
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let v = run();
        failed += !v.pass as usize;
        println!(
            "  [{}] {}. {name}: {} ({:.2?})",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            t0.elapsed()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed\n",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
