use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use preview_mpc::controllers::control_step;
use preview_mpc::harness::simulate;
use preview_mpc::ocp::{condense, solve_ocp};
use preview_mpc::qp::solve_qp;
use preview_mpc::synthesis::{compute_terminal_set, synthesize_gain};
use preview_mpc::{ControllerKind, DisturbanceSpec, Scenario, Vector};
use preview_mpc_bench::{double_integrator, sets, spec, weights, window};

fn terminal_set(c: &mut Criterion) {
    let lin = double_integrator();
    let k = synthesize_gain(&lin, &weights()).unwrap();
    let (x, u, w) = sets();
    c.bench_function("terminal_set", |b| {
        b.iter(|| compute_terminal_set(&lin, &k, &x, &u, &w).unwrap())
    });
}

fn qp_and_ocp(c: &mut Criterion) {
    let x0 = Vector::from_row_slice(&[-0.7, 0.4]);
    let mut qp_group = c.benchmark_group("qp_solve");
    for n in [5, 10, 20] {
        let s = spec(n);
        let qp = condense(&s, &x0, &window(n)).unwrap();
        qp_group.bench_with_input(BenchmarkId::from_parameter(n), &qp, |b, qp| {
            b.iter(|| solve_qp(black_box(qp)).unwrap())
        });
    }
    qp_group.finish();

    let mut ocp_group = c.benchmark_group("ocp_solve");
    for n in [5, 10, 20] {
        let s = spec(n);
        let win = window(n);
        ocp_group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_ocp(&s, black_box(&x0), &win, None).unwrap())
        });
    }
    ocp_group.finish();
}

fn closed_loop(c: &mut Criterion) {
    let s = spec(5);
    let x0 = Vector::from_row_slice(&[-0.7, 0.4]);
    let win = window(5);
    let mut group = c.benchmark_group("control_step");
    for kind in ControllerKind::COMPARED {
        group.bench_function(kind.as_str(), |b| {
            b.iter(|| control_step(kind, &s, black_box(&x0), &win, None).unwrap())
        });
    }
    group.finish();

    let sc = Scenario {
        x0: vec![-0.7, 0.4],
        steps: 30,
        horizon: 5,
        controller: ControllerKind::PreviewMpc,
        disturbance: DisturbanceSpec::Uniform { seed: 0 },
    };
    c.bench_function("simulate_30_steps", |b| {
        b.iter(|| simulate(&sc, &s).unwrap())
    });
}

criterion_group!(benches, terminal_set, qp_and_ocp, closed_loop);
criterion_main!(benches);
